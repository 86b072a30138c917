"""The image pipeline: CIFAR-10 binary files -> conv backbone -> metrics.

Generates a small dataset in the exact CIFAR-10 binary layout so the demo
runs without a download; point `DATA_DIR` at a real `cifar-10-batches-bin`
directory (and raise the epochs) for the full-scale mode.

Run:  python demos/05_cifar_pipeline.py
"""

from pathlib import Path

import numpy as np

from auxcl.config import load_config
from auxcl.experiments import aggregate, render_report, run_experiment

HERE = Path(__file__).parent
DATA_DIR = HERE / "out" / "cifar-format-demo"
AUX_DIR = HERE / "out" / "cifar-format-demo-aux"
OUT = HERE / "out" / "cifar"


def write_cifar_dir(directory: Path, per_class_per_file: int, test_per_class: int, seed: int):
    """Emit learnable images in the 3073-byte record format (10 classes)."""
    rng = np.random.default_rng(seed)
    patterns = rng.integers(40, 216, size=(10, 3, 32, 32))

    def records(per_class):
        labels = np.repeat(np.arange(10), per_class)
        labels = labels[rng.permutation(labels.size)]
        out = np.empty((labels.size, 3073), dtype=np.uint8)
        noise = rng.normal(0.0, 35.0, size=(labels.size, 3, 32, 32))
        images = np.clip(patterns[labels] + noise, 0, 255).astype(np.uint8)
        out[:, 0] = labels
        out[:, 1:] = images.reshape(labels.size, -1)
        return out

    directory.mkdir(parents=True, exist_ok=True)
    for i in range(1, 6):
        records(per_class_per_file).tofile(str(directory / f"data_batch_{i}.bin"))
    records(test_per_class).tofile(str(directory / "test_batch.bin"))


write_cifar_dir(DATA_DIR, per_class_per_file=6, test_per_class=10, seed=5)
write_cifar_dir(AUX_DIR, per_class_per_file=6, test_per_class=2, seed=6)

CONFIG = f"""
version = 1
output_dir = "{OUT.as_posix()}"
seeds = [0]

[dataset]
kind = "cifar10"
path = "{DATA_DIR.as_posix()}"

[aux]
kind = "cifar10"
path = "{AUX_DIR.as_posix()}"

[sequence]
classes_per_task = 2
num_tasks = 5

[model]
kind = "small_cnn"
channels = [16, 32]
dtype = "float32"

[training]
lr = 0.03
epochs_per_task = 2
task_batch = 32
aux_batch = 32
replay_batch = 32

[[grid]]
method = "derpp"
buffer = 200
use_aux = true
use_mah = true
"""

config_path = HERE / "out" / "cifar.toml"
config_path.write_text(CONFIG)
cfg = load_config(config_path)
print("running the image pipeline (a couple of minutes at demo size)...")
run_experiment(cfg)
print(render_report(aggregate(OUT), fmt="text"))
