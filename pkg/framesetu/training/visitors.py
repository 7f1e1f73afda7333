import csv
import logging
import os
import sys
import time

from tqdm import tqdm

from .checkpoint import file_digest

logger = logging.getLogger(__name__)


# ---------------------------------------------------------
# Base Visitor Interface
# ---------------------------------------------------------
class TrainVisitor:
    """Receives trainer lifecycle events; every hook is optional."""

    def on_train_start(self, context): pass
    def on_step_end(self, context): pass
    def on_checkpoint(self, context, path): pass
    def on_divergence(self, context, error): pass
    def on_train_end(self, context): pass


# ---------------------------------------------------------
# Stats Visitor
# ---------------------------------------------------------
class StatsVisitor(TrainVisitor):
    def on_train_start(self, context):
        cfg = context.config
        logging.info(
            f"[Trainer] Starting run: iterations={cfg.iterations} batch={cfg.batch_size} "
            f"patch={cfg.patch_size} mu={cfg.mu} loss={cfg.loss_mode} -> {cfg.output_dir}"
        )

    def on_train_end(self, context):
        elapsed = time.time() - context.start_time
        logging.info("========== SUMMARY ==========")
        for k, v in context.stats.items():
            logging.info(f"{k:20}: {v}")
        if context.last_loss:
            for k, v in context.last_loss.items():
                logging.info(f"{'last_' + k:20}: {v:.4f}")
        logging.info(f"Elapsed: {elapsed:.2f}s")
        logging.info("=============================")


# ---------------------------------------------------------
# Loss Log Visitor
# ---------------------------------------------------------
class LossLogVisitor(TrainVisitor):
    """Append-only CSV: iteration,nll,perceptual,total,lr."""

    FIELDS = ("iteration", "nll", "perceptual", "total", "lr")

    def __init__(self, filename="loss_log.csv"):
        self.filename = filename
        self.path = None

    def on_train_start(self, context):
        self.path = os.path.join(context.config.output_dir, self.filename)
        os.makedirs(context.config.output_dir, exist_ok=True)
        if not os.path.exists(self.path):
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(self.FIELDS)

    def on_step_end(self, context):
        loss = context.last_loss
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow([
                context.iteration,
                repr(loss["nll"]), repr(loss["perceptual"]), repr(loss["total"]),
                repr(context.lr),
            ])
        every = context.config.log_every
        if every and context.iteration % every == 0:
            context.log(
                f"nll={loss['nll']:.4f} per={loss['perceptual']:.4f} "
                f"total={loss['total']:.4f} bpd={loss['bits_per_dim']:.3f}"
            )


# ---------------------------------------------------------
# Checkpoint Visitor
# ---------------------------------------------------------
class CheckpointVisitor(TrainVisitor):
    """Indexes written checkpoints with their digests and optionally prunes old ones."""

    def __init__(self, keep_last=None, index_name="checkpoints.txt"):
        self.keep_last = keep_last
        self.index_name = index_name
        self.written = []

    def on_checkpoint(self, context, path):
        digest = file_digest(path)
        self.written.append(path)
        with open(os.path.join(context.config.output_dir, self.index_name), "a") as f:
            f.write(f"{context.iteration}\t{os.path.basename(path)}\t{digest}\n")
        context.log(f"[Checkpoint] {os.path.basename(path)} sha1={digest}")

        if self.keep_last:
            while len(self.written) > self.keep_last:
                old = self.written.pop(0)
                if os.path.exists(old):
                    os.remove(old)
                    context.log(f"[Checkpoint] Pruned {os.path.basename(old)}", level=logging.DEBUG)

    def on_divergence(self, context, error):
        if context.last_checkpoint:
            context.log(f"[Checkpoint] Last good checkpoint: {context.last_checkpoint}", level=logging.ERROR)
        else:
            context.log("[Checkpoint] Diverged before the first checkpoint", level=logging.ERROR)


# ---------------------------------------------------------
# Progress Visitor
# ---------------------------------------------------------
class ProgressVisitor(TrainVisitor):
    def __init__(self):
        self.bar = None

    def on_train_start(self, context):
        self.bar = tqdm(
            total=context.config.iterations, initial=context.iteration,
            disable=not sys.stdout.isatty(), desc="train",
        )

    def on_step_end(self, context):
        self.bar.update(1)
        self.bar.set_postfix(nll=f"{context.last_loss['nll']:.3f}")

    def on_divergence(self, context, error):
        self.on_train_end(context)

    def on_train_end(self, context):
        if self.bar is not None:
            self.bar.close()
            self.bar = None


VISITOR_REGISTRY = {
    "StatsVisitor": StatsVisitor,
    "LossLogVisitor": LossLogVisitor,
    "CheckpointVisitor": CheckpointVisitor,
    "ProgressVisitor": ProgressVisitor,
}
DEFAULT_VISITORS = ["StatsVisitor", "LossLogVisitor", "CheckpointVisitor", "ProgressVisitor"]


def build_visitors(names=None):
    """Instantiate visitors by class name; entries may be a name or {name: {kwargs}}."""
    visitors = []
    for entry in DEFAULT_VISITORS if names is None else names:
        if isinstance(entry, dict):
            (name, params), = entry.items()
        else:
            name, params = entry, {}
        if name not in VISITOR_REGISTRY:
            logging.warning(f"Unknown visitor: {name}, skipping")
            continue
        visitors.append(VISITOR_REGISTRY[name](**(params or {})))
    return visitors
