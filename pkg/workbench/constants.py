"""Shared constants: presets, protection defaults, reward scales and file layouts."""

BASE_FREQUENCY_HZ = 60.0

SYSTEM_PRESETS = {
    "MG1": {
        "agc_gain": 3.0,
        "droop_gain": 40.0,
        "governor_tc": 0.08,
        "turbine_tc": 0.45,
        "inertia": 6.0,
        "damping": 0.03,
    },
    "MG2": {
        "agc_gain": 10.0,
        "droop_gain": 50.0,
        "governor_tc": 0.08,
        "turbine_tc": 0.45,
        "inertia": 6.0,
        "damping": 0.03,
    },
    "MG3": {
        "agc_gain": 12.0,
        "droop_gain": 50.0,
        "governor_tc": 0.1,
        "turbine_tc": 0.45,
        "inertia": 8.0,
        "damping": 0.03,
    },
}

for preset in SYSTEM_PRESETS.values():
    preset.setdefault("freq_sensor_tc", 0.1)
    preset.setdefault("rocof_sensor_tc", 0.1)
    preset.setdefault("measurement_gain", 1.0)
    preset.setdefault("base_frequency", BASE_FREQUENCY_HZ)

STATE_NAMES = ("de", "dpg", "dpm", "dw", "dw_meas", "rocof_meas")
INPUT_NAMES = ("dpl", "dptie")
ATTACK_NAMES = ("p1", "p2", "p3", "p4")

TRACE_CSV_HEADER = ("t",) + STATE_NAMES + INPUT_NAMES + ATTACK_NAMES
LOAD_CSV_HEADER = ("t", "dpl")

INTEGRATION_DT = 0.01

RELAY_DEFAULTS = {
    "of_threshold": 62.0,
    "of_clearing": 0.160,
    "uf_threshold": 56.5,
    "uf_clearing": 0.160,
    "rocof_threshold": 3.0,
    "rocof_clearing": 0.0,
}

# Tolerance applied when comparing accumulated relay timers with clearing times.
CLEARING_TOLERANCE = 1e-9

LOAD_PROCESS_DEFAULTS = {
    "sigma_fast": 0.05 / 3,
    "sigma_slow": 0.2 / 3,
    "fast_step": 1.0,
    "slow_step": 300.0,
    "clamp": None,
}

REWARD_DEFAULTS = {
    "rocof_scale": 0.05,
    "freq_scale_fdi": 2.0 / 60.0,
    "freq_scale_switch": 5.0 / 60.0,
    "trip_bonus": 20.0,
    "uf_of_penalty_fdi": 20.0,
}

FDI_TRAINING_BOUNDS = (-0.1, 0.1)
FDI_DEPLOYMENT_BOUNDS = (-3.5 / 60.0, 2.0 / 60.0)

EPISODE_LIMIT = 15.0
AGENT_STEP = 0.05

# Observation channels (dw_meas, rocof_meas) are divided by these ranges at the network input.
OBSERVATION_SCALES = (0.1, 0.1)

AGENT_DEFAULTS = {
    "batch_size": 128,
    "actor_lr": 1e-4,
    "critic_lr": 1e-3,
    "gamma": 0.99,
    "tau": 1e-3,
    "noise_std": 0.3,
    "noise_decay": 1.0,
    "buffer_capacity": 1_000_000,
    "max_episodes": 3000,
    "output_activation": "tanh",
    "target_update_period": 1,
    "early_stop_window": 50,
    "early_stop_rate": 0.95,
}

ACTOR_HIDDEN = (100, 50)
CRITIC_OBSERVATION_HIDDEN = (100, 50)
CRITIC_ACTION_HIDDEN = 50

RECORD_DT = 0.05
RECORD_CHANNELS = ("de", "dw_meas")
CROP_LENGTH_RANGE = (100, 300)
SPLIT_FRACTIONS = (0.55, 0.15, 0.30)
CLASS_QUOTA = 1000
SPLIT_NAMES = ("train", "validation", "test")

# Detector input scaling for (de, dw_meas).
DETECTOR_CHANNEL_SCALES = (0.2, 0.1)

CLASSIFIER_LAYERS = ((75, 0.1), (50, 0.2), (35, 0.1))
AUTOENCODER_WIDTHS = (36, 8, 36)

DETECTOR_DEFAULTS = {
    "learning_rate": 1e-3,
    "batch_size": 32,
    "max_epochs": 200,
    "patience": 10,
    "threshold_policy": "max-factor",
    "threshold_factor": 1.05,
    "threshold_value": 0.2,
}

ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8

# Floors checked by `evaluate --assert`.
ACCEPTANCE_FLOORS = {
    "classifier_accuracy": 0.90,
    "classifier_binary_accuracy": 0.97,
    "autoencoder_binary_accuracy": 0.95,
    "trip_accuracy_margin": 0.10,
    "class2_recall": 0.85,
    "integrated_trip_accuracy_gap": 0.01,
}

DEFAULT_SEEDS = {
    "base": 0,
    "simulation": 1,
    "agent": 2,
    "dataset": 3,
    "detector": 4,
}
