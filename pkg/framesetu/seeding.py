"""Seed plumbing: every stochastic draw goes through an explicit torch.Generator."""

import contextlib

import torch


@contextlib.contextmanager
def seeded(seed):
    """Run a block (typically module construction) under a fixed global torch seed,
    restoring the caller's RNG state afterwards."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def make_generator(seed):
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen
