"""Keyed derivation of independent random streams."""
import hashlib
import secrets

import numpy as np


def stream_key(master_seed, agent_id, env_index, purpose_tag):
    payload = f"{int(master_seed)}|{int(agent_id)}|{int(env_index)}|{purpose_tag}".encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=16).digest(), "little")


def seed_streams(master_seed, agent_id, env_index, purpose_tag):
    """Generator for the tuple (master_seed, agent_id, env_index, purpose_tag).

    Use ``-1`` for agent_id or env_index when a stream is not tied to one.
    """
    return np.random.Generator(np.random.PCG64(
        stream_key(master_seed, agent_id, env_index, purpose_tag)))


def entropy_seed():
    return secrets.randbits(63)


def rng_state(rng):
    return rng.bit_generator.state


def restore_rng(state):
    bitgen = np.random.PCG64()
    bitgen.state = state
    return np.random.Generator(bitgen)
