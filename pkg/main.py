import json
import logging
import sys

import click
import dotenv
import numpy as np
import torch
from PIL import Image
from pydantic import ValidationError
from torchvision.utils import save_image

from utils.config.settings import DEVICE, NUM_WORKERS
from utils.evaluation.grid import sweep_grid
from utils.evaluation.metrics import ModelEditor, evaluate_checkpoint, report_frame
from utils.exceptions import MaaeError
from utils.logger.logger import get_logger_config
from utils.receptive_field.rfcover import cover_for_layers, load_architecture
from utils.synthetic_data.dataset import DatasetConfig, generate_dataset
from utils.synthetic_data.renderer import SUPPORTED_SIZES
from utils.training.config import TrainConfig
from utils.training.pretrain import pretrain_classifier
from utils.training.trainer import train as run_training

dotenv.load_dotenv()

logger = logging.getLogger("maae")
get_logger_config(logging)


def _load_image(path):
    array = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(array).permute(2, 0, 1).unsqueeze(0)


@click.group()
def cli():
    """Mask-aware attribute editing on synthetic faces."""


@cli.command("generate-data")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--num-identities", default=50, show_default=True, type=int)
@click.option("--samples-per-identity", default=40, show_default=True, type=int)
@click.option("--size", default=32, show_default=True, type=click.Choice([str(s) for s in SUPPORTED_SIZES]))
@click.option("--test-fraction", default=0.2, show_default=True, type=float)
@click.option("--workers", default=NUM_WORKERS, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
def generate_data_command(out_dir, num_identities, samples_per_identity, size, test_fraction, workers, seed):
    """Render a synthetic face dataset with masks and a JSON-lines manifest."""
    config = DatasetConfig(
        num_identities=num_identities, samples_per_identity=samples_per_identity, size=int(size),
        out_dir=out_dir, seed=seed, test_fraction=test_fraction, workers=workers,
    )
    manifest = generate_dataset(config)
    click.echo(str(manifest))


@cli.command("train-classifier")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--target", required=True, type=click.Choice(["identity", "attribute"]))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--epochs", default=10, show_default=True, type=int)
@click.option("--batch-size", default=64, show_default=True, type=int)
@click.option("--lr", default=1e-3, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--classifier-version", default=1, show_default=True, type=int, help="Version pin stored with the weights.")
def train_classifier_command(dataset_path, target, out_path, epochs, batch_size, lr, seed, classifier_version):
    """Pretrain the frozen identity extractor or the attribute oracle."""
    path, accuracy = pretrain_classifier(
        dataset_path, target, out_path, epochs=epochs, batch_size=batch_size, lr=lr, seed=seed,
        classifier_version=classifier_version,
    )
    click.echo(json.dumps({"path": str(path), "held_out_accuracy": accuracy}))


@cli.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--epochs", type=int, help="Override TrainConfig.epochs.")
@click.option("--batch-size", type=int, help="Override TrainConfig.batch_size.")
@click.option("--seed", type=int, help="Override TrainConfig.seed.")
@click.option("--checkpoint-dir", type=click.Path(file_okay=False), help="Override TrainConfig.checkpoint_dir.")
@click.option("--resume", is_flag=True, help="Continue from the latest epoch checkpoint.")
def train_command(config_path, epochs, batch_size, seed, checkpoint_dir, resume):
    """Train the generator and discriminator from a JSON TrainConfig."""
    with open(config_path) as f:
        raw = json.load(f)
    overrides = {"epochs": epochs, "batch_size": batch_size, "seed": seed, "checkpoint_dir": checkpoint_dir}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    config = TrainConfig.model_validate(raw)
    click.echo(str(run_training(config, resume=resume)))


@cli.command("manipulate")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
@click.option("--attribute", "attributes", multiple=True, help="Repeat to edit several attributes at once.")
@click.option("--delta", type=float, help="Attribute strength; defaults to the calibrated delta.")
@click.option("--seed", default=0, show_default=True, type=int)
def manipulate_command(checkpoint, input_path, output_path, attributes, delta, seed):
    """Edit one image; without --attribute the image is only reconstructed."""
    if delta is not None and not attributes:
        raise click.UsageError("--delta needs at least one --attribute")
    torch.manual_seed(seed)
    editor = ModelEditor.from_checkpoint(checkpoint, DEVICE)
    image = _load_image(input_path).to(DEVICE)
    with torch.no_grad():
        if attributes:
            out = editor.generate(image, attributes, editor.delta if delta is None else delta)
        else:
            out = editor.generator.generate(image)
    save_image(out.cpu(), output_path)
    click.echo(output_path)


@cli.command("sweep")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
@click.option("--attribute", "attributes", multiple=True, help="One grid row per attribute; defaults to all trained.")
@click.option("--deltas", help="Comma-separated ascending deltas; defaults to 7 points in [-delta, +delta].")
@click.option("--seed", default=0, show_default=True, type=int)
def sweep_command(checkpoint, input_path, output_path, attributes, deltas, seed):
    """Write a continuous-manipulation grid for one image."""
    torch.manual_seed(seed)
    editor = ModelEditor.from_checkpoint(checkpoint, DEVICE)
    if deltas:
        values = [float(d) for d in deltas.split(",")]
    else:
        values = np.linspace(-editor.delta, editor.delta, 7).tolist()
    image = _load_image(input_path).to(DEVICE)
    path, _ = sweep_grid(editor, image, list(attributes) or editor.attributes, values, output_path)
    click.echo(str(path))


@cli.command("evaluate")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--classifier", required=True, type=click.Path(dir_okay=False), help="Attribute classifier weights.")
@click.option("--extractor", required=True, type=click.Path(dir_okay=False), help="Identity classifier weights.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="EvalReport JSON file.")
@click.option("--split", default="test", show_default=True, type=click.Choice(["train", "test"]))
@click.option("--max-samples", type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--classifier-version", type=int, help="Refuse an attribute classifier with another version pin.")
def evaluate_command(checkpoint, dataset_path, classifier, extractor, out_path, split, max_samples, seed,
                     classifier_version):
    """Compute flip rate, background drift, cycle error and ID drift."""
    report = evaluate_checkpoint(
        checkpoint, dataset_path, classifier, extractor,
        split=split, seed=seed, max_samples=max_samples, device=DEVICE, classifier_version=classifier_version,
    )
    with open(out_path, "w") as f:
        f.write(report.model_dump_json(indent=2))
    click.echo(report_frame(report).to_string())


@cli.command("rf-cover")
@click.option("--arch", "arch_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input-size", type=int, help="Overrides the input size stored in the architecture file.")
def rf_cover_command(arch_path, input_size):
    """Print the minimal covering pixel set of a conv stack as JSON."""
    layers, stored_size = load_architecture(arch_path)
    size = input_size if input_size is not None else stored_size
    if size is None:
        raise click.UsageError("--input-size is required when the architecture file does not give one")
    rf, top, pixel_set = cover_for_layers(layers, size)
    click.echo(json.dumps({
        "receptive_field": rf.model_dump(),
        "feature_size": top,
        "axis_positions": list(pixel_set.axis_positions),
        "positions": [list(p) for p in pixel_set.positions_2d],
    }))


def cli_main(argv=None):
    """
    Run the CLI and return its exit code: 0 on success, 1 on a library,
    validation or I/O error, 2 on a usage error.
    """
    try:
        result = cli.main(args=argv, prog_name="maae", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except (MaaeError, ValidationError, json.JSONDecodeError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        click.echo(f"error: {e}", err=True)
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(cli_main())
