import django.core.validators
import django.db.models.deletion
import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("subcommand", models.CharField(max_length=40)),
                ("config_hash", models.CharField(max_length=64)),
                ("base_seed", models.BigIntegerField(default=0)),
                ("output_dir", models.CharField(max_length=500)),
                (
                    "status",
                    models.CharField(
                        choices=[("running", "Running"), ("succeeded", "Succeeded"), ("failed", "Failed")],
                        default="running",
                        max_length=16,
                    ),
                ),
                ("exit_code", models.PositiveSmallIntegerField(default=0)),
                ("started_at", models.DateTimeField(default=django.utils.timezone.now)),
                ("finished_at", models.DateTimeField(blank=True, null=True)),
            ],
            options={
                "verbose_name": "Experiment run",
                "verbose_name_plural": "Experiment runs",
                "ordering": ["-started_at"],
                "indexes": [models.Index(fields=["subcommand", "config_hash"], name="run_subcommand_hash_idx")],
            },
        ),
        migrations.CreateModel(
            name="RunArtifact",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("path", models.CharField(max_length=500)),
                ("sha256", models.CharField(max_length=64)),
                ("size", models.BigIntegerField(validators=[django.core.validators.MinValueValidator(0)])),
                (
                    "run",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="artifacts",
                        to="workbench.experimentrun",
                    ),
                ),
            ],
            options={
                "ordering": ["run", "path"],
                "constraints": [
                    models.UniqueConstraint(fields=("run", "path"), name="unique_artifact_path_per_run"),
                ],
            },
        ),
    ]
