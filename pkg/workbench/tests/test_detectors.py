import io
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from workbench.choices import RecordLabel, ThresholdPolicy, TripClass
from workbench.datasets import LabeledRecord
from workbench.detectors import (
    AutoencoderModel,
    ClassifierModel,
    ConfusionMatrix,
    DetectorConfig,
    build_autoencoder,
    build_classifier,
    check_acceptance,
    classify,
    classify_many,
    detect_anomaly,
    evaluate,
    integrated_detect,
    length_buckets,
    load_detector,
    pad_batch,
    reconstruct,
    reconstruction_errors,
    save_detector,
    select_threshold,
    train_autoencoder,
    train_classifier,
    write_mae_histogram,
)
from workbench.exceptions import AcceptanceError, DetectorNotReadyError

SMALL = DetectorConfig(
    batch_size=4,
    max_epochs=2,
    patience=1,
    classifier_layers=((4, 0.1), (3, 0.0)),
    autoencoder_widths=(3, 2, 3),
)


def make_records(labels, seed=0, lengths=(5, 9)):
    rng = np.random.default_rng(seed)
    records = []
    for label in labels:
        n = int(rng.integers(lengths[0], lengths[1]))
        scale = 0.01 * int(label)
        records.append(LabeledRecord(rng.normal(scale=scale, size=n), rng.normal(scale=scale, size=n), label))
    return records


def zeroed(network):
    for param in network.parameters():
        param.value[...] = 0.0
    return network


class DetectorConfigTests(SimpleTestCase):
    def test_defaults_are_valid(self):
        DetectorConfig().clean()

    def test_invalid_fields(self):
        with self.assertRaises(ValidationError) as ctx:
            DetectorConfig(threshold_policy="median", patience=0).clean()
        self.assertEqual(set(ctx.exception.message_dict), {"threshold_policy", "patience"})

    def test_dict_round_trip(self):
        self.assertEqual(DetectorConfig.from_dict(SMALL.to_dict()), SMALL)

    def test_unknown_key(self):
        with self.assertRaises(ValidationError):
            DetectorConfig.from_dict({"epochs": 3})


class BatchingTests(SimpleTestCase):
    def test_pad_batch(self):
        records = make_records([1, 2, 3])
        X, mask = pad_batch(records)
        longest = max(len(r) for r in records)
        self.assertEqual(X.shape, (3, longest, 2))
        for row, record in enumerate(records):
            self.assertEqual(mask[row].sum(), len(record))
            self.assertTrue(np.all(X[row, len(record) :] == 0.0))

    def test_buckets_group_similar_lengths(self):
        records = [LabeledRecord(np.zeros(n), np.zeros(n), 1) for n in (3, 5, 2, 5)]
        self.assertEqual(length_buckets(records, 2, None), [[2, 0], [1, 3]])

    def test_shuffled_buckets_cover_every_record(self):
        records = make_records([1] * 11)
        batches = length_buckets(records, 4, np.random.default_rng(0))
        self.assertEqual(sorted(i for batch in batches for i in batch), list(range(11)))


class ClassifierTests(SimpleTestCase):
    def test_ties_go_to_the_lowest_label(self):
        model = ClassifierModel(zeroed(build_classifier(SMALL, np.random.default_rng(0))), SMALL)
        probs, label = classify(model, make_records([3])[0])
        np.testing.assert_allclose(probs, 0.25)
        self.assertEqual(label, RecordLabel.NORMAL)

    def test_output_is_a_distribution(self):
        model = ClassifierModel(build_classifier(SMALL, np.random.default_rng(0)), SMALL)
        probs, label = classify(model, make_records([2])[0])
        self.assertAlmostEqual(float(probs.sum()), 1.0)
        self.assertEqual(label, RecordLabel(int(np.argmax(probs)) + 1))

    def test_batched_classification_matches_single(self):
        model = ClassifierModel(build_classifier(SMALL, np.random.default_rng(1)), SMALL)
        records = make_records([1, 2, 3, 4, 1], seed=2)
        single = [classify(model, record)[1] for record in records]
        self.assertEqual(classify_many(model, records, batch_size=2), single)

    def test_short_training_run(self):
        train = make_records([1, 2, 3, 4] * 3, seed=3)
        validation = make_records([1, 2, 3, 4], seed=4)
        model = train_classifier(train, validation, SMALL, seed=0)
        epochs = [entry for entry in model.history if "epoch" in entry]
        self.assertTrue(1 <= len(epochs) <= 2)
        self.assertIn(model.history[-1]["selected_epoch"], {1, 2})

    def test_empty_split_rejected(self):
        with self.assertRaises(ValidationError):
            train_classifier([], make_records([1]), SMALL)


class AutoencoderTests(SimpleTestCase):
    def setUp(self):
        self.model = AutoencoderModel(build_autoencoder(SMALL, np.random.default_rng(0)), SMALL)

    def test_reconstruction_shape(self):
        record = make_records([1])[0]
        self.assertEqual(reconstruct(self.model, record).shape, (len(record), 2))

    def test_errors_ignore_padding(self):
        records = make_records([1, 1, 1], seed=5)
        together = reconstruction_errors(self.model, records)
        alone = np.array([reconstruction_errors(self.model, [r])[0] for r in records])
        np.testing.assert_allclose(together, alone, rtol=1e-10)

    def test_threshold_policies(self):
        self.assertAlmostEqual(select_threshold([0.1, 0.4, 0.2], ThresholdPolicy.MAX_FACTOR, factor=1.05), 0.42)
        self.assertEqual(select_threshold([0.1], ThresholdPolicy.FIXED, value=0.2), 0.2)
        with self.assertRaises(ValidationError):
            select_threshold([])

    def test_detection_is_strictly_above_threshold(self):
        record = make_records([4])[0]
        mae = float(reconstruction_errors(self.model, [record])[0])
        self.model.threshold = mae
        self.assertEqual(detect_anomaly(self.model, record), (False, mae))
        self.model.threshold = mae * 0.999
        self.assertTrue(detect_anomaly(self.model, record)[0])

    def test_raising_the_threshold_never_adds_detections(self):
        for seed in range(3):
            model = AutoencoderModel(build_autoencoder(SMALL, np.random.default_rng(seed)), SMALL)
            records = make_records([1, 2, 3, 4] * 3, seed=seed)
            errors = reconstruction_errors(model, records)
            thresholds = np.concatenate([[0.0], np.sort(errors), [errors.max() * 2.0]])
            previous = None
            for threshold in thresholds:
                model.threshold = float(threshold)
                flagged = {i for i, record in enumerate(records) if detect_anomaly(model, record)[0]}
                with self.subTest(seed=seed, threshold=float(threshold)):
                    if previous is not None:
                        self.assertLessEqual(flagged, previous)
                previous = flagged
            self.assertEqual(previous, set())

    def test_threshold_required(self):
        with self.assertRaises(DetectorNotReadyError):
            detect_anomaly(self.model, make_records([1])[0])
        with self.assertRaises(DetectorNotReadyError):
            evaluate(None, self.model, make_records([1, 2]))

    def test_trains_on_normal_records_only(self):
        with self.assertRaises(ValidationError):
            train_autoencoder(make_records([1, 2]), make_records([1]), SMALL)

    def test_short_training_run(self):
        model = train_autoencoder(make_records([1] * 6, seed=6), make_records([1] * 2, seed=7), SMALL, seed=0)
        self.assertIsNone(model.threshold)
        self.assertIn(model.history[-1]["selected_epoch"], {1, 2})


class IntegratedTests(SimpleTestCase):
    def setUp(self):
        classifier = zeroed(build_classifier(SMALL, np.random.default_rng(0)))
        classifier.layers[-2].b.value[:] = [0.0, 0.0, 0.0, 5.0]
        self.classifier = ClassifierModel(classifier, SMALL)
        self.autoencoder = AutoencoderModel(build_autoencoder(SMALL, np.random.default_rng(0)), SMALL)
        self.record = make_records([4])[0]

    def test_normal_looking_records_skip_the_classifier(self):
        self.autoencoder.threshold = 1e6
        decision = integrated_detect(self.autoencoder, self.classifier, self.record)
        self.assertTrue(decision.accepted)
        self.assertIsNone(decision.alert)
        self.assertIsNone(decision.classifier_label)

    def test_anomalies_are_classified(self):
        self.autoencoder.threshold = 0.0
        decision = integrated_detect(self.autoencoder, self.classifier, self.record)
        self.assertFalse(decision.accepted)
        self.assertEqual(decision.alert, TripClass.ROCOF)
        self.assertEqual(decision.classifier_label, RecordLabel.ROCOF_TRIP)

    def test_integrated_alarms_are_a_subset_of_autoencoder_alarms(self):
        for seed in range(4):
            classifier = ClassifierModel(build_classifier(SMALL, np.random.default_rng(seed)), SMALL)
            autoencoder = AutoencoderModel(build_autoencoder(SMALL, np.random.default_rng(seed)), SMALL)
            records = make_records([1] * 8 + [2, 3, 4] * 2, seed=seed)
            errors = reconstruction_errors(autoencoder, records)
            autoencoder.threshold = float(np.median(errors))
            for i, record in enumerate(records):
                decision = integrated_detect(autoencoder, classifier, record)
                with self.subTest(seed=seed, record=i):
                    if not detect_anomaly(autoencoder, record)[0]:
                        self.assertTrue(decision.accepted)
            report = evaluate(classifier, autoencoder, records)
            self.assertLessEqual(report["integrated"]["false_alarms"], report["autoencoder"]["false_alarms"])

    def test_evaluate_reports_all_three_views(self):
        self.autoencoder.threshold = 0.0
        report = evaluate(self.classifier, self.autoencoder, make_records([1, 2, 3, 4]))
        self.assertEqual(report["records"], 4)
        self.assertEqual(report["classifier"]["recall"]["4"], 1.0)
        self.assertEqual(report["autoencoder"]["false_alarms"], 1)
        self.assertEqual(report["integrated"]["false_alarms"], 1)


class ConfusionMatrixTests(SimpleTestCase):
    def setUp(self):
        self.matrix = ConfusionMatrix.from_labels([1, 2, 3, 4, 4], [1, 3, 3, 4, 2])

    def test_accuracies(self):
        self.assertAlmostEqual(self.matrix.accuracy, 0.6)
        self.assertAlmostEqual(self.matrix.binary_accuracy, 1.0)
        self.assertAlmostEqual(self.matrix.trip_accuracy, 0.6)

    def test_precision_and_recall(self):
        self.assertEqual(self.matrix.precision(), {1: 1.0, 2: 0.0, 3: 0.5, 4: 1.0})
        self.assertEqual(self.matrix.recall(), {1: 1.0, 2: 0.0, 3: 1.0, 4: 0.5})

    def test_empty_columns_have_no_precision(self):
        self.assertIsNone(ConfusionMatrix.from_labels([1], [1]).precision()[2])

    def test_csv(self):
        stream = io.StringIO()
        self.matrix.write_csv(stream)
        lines = stream.getvalue().splitlines()
        self.assertEqual(lines[0], "true,pred_1,pred_2,pred_3,pred_4")
        self.assertEqual(lines[4], "4,0,1,0,1")

    def test_mae_histogram(self):
        stream = io.StringIO()
        write_mae_histogram(np.array([0.1, 0.2, 0.3]), [1, 1, 4], stream, bins=2)
        rows = [line.split(",") for line in stream.getvalue().splitlines()[1:]]
        self.assertEqual(len(rows), 2)
        self.assertEqual(sum(int(row[2]) for row in rows), 2)
        self.assertEqual(sum(int(row[5]) for row in rows), 1)


class AcceptanceTests(SimpleTestCase):
    def report(self, **changes):
        report = {
            "classifier": {"accuracy": 0.95, "binary_accuracy": 0.99, "trip_accuracy": 0.95, "recall": {"2": 0.9}},
            "autoencoder": {"binary_accuracy": 0.96, "trip_accuracy": 0.80, "false_alarms": 3},
            "integrated": {"trip_accuracy": 0.95, "false_alarms": 1},
        }
        for key, value in changes.items():
            section, name = key.split("__")
            report[section][name] = value
        return report

    def test_passing_report(self):
        check_acceptance(self.report())

    def test_every_failure_is_listed(self):
        with self.assertRaises(AcceptanceError) as ctx:
            check_acceptance(self.report(classifier__accuracy=0.5, integrated__false_alarms=5))
        self.assertEqual(set(ctx.exception.failures), {"classifier_accuracy", "integrated_false_alarms"})

    def test_missing_section(self):
        with self.assertRaises(AcceptanceError):
            check_acceptance({"classifier": self.report()["classifier"]})


class PersistenceTests(SimpleTestCase):
    def test_save_and_load_both_kinds(self):
        record = make_records([2])[0]
        classifier = ClassifierModel(build_classifier(SMALL, np.random.default_rng(0)), SMALL)
        autoencoder = AutoencoderModel(build_autoencoder(SMALL, np.random.default_rng(1)), SMALL, threshold=0.3)
        with tempfile.TemporaryDirectory() as tmp:
            save_detector(Path(tmp) / "classifier.json", classifier)
            save_detector(Path(tmp) / "autoencoder.json", autoencoder)
            restored_classifier = load_detector(Path(tmp) / "classifier.json")
            restored_autoencoder = load_detector(Path(tmp) / "autoencoder.json")
        self.assertIsInstance(restored_classifier, ClassifierModel)
        np.testing.assert_array_equal(classify(restored_classifier, record)[0], classify(classifier, record)[0])
        self.assertEqual(restored_autoencoder.threshold, 0.3)
        self.assertEqual(restored_autoencoder.config, SMALL)
        np.testing.assert_array_equal(reconstruct(restored_autoencoder, record), reconstruct(autoencoder, record))

    def test_load_rejects_other_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "detector.json"
            path.write_text('{"kind": "classifier"}')
            with self.assertRaises(ValidationError):
                load_detector(path)
