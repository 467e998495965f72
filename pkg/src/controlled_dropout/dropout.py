"""Bernoulli dropout and controlled dropout with a fixed mask bank.

Both variants use inverted scaling: kept units are multiplied by
``1 / (1 - p)`` so a pass with dropout switched off needs no rescaling.

A controlled layer draws its masks from a :class:`MaskBank`, a set of
``n_sample`` distinct, non-zero scaled masks generated once by rejection
sampling. A network with ``L`` controlled layers can therefore only ever
realize ``prod(n_sample_l)`` joint sub-networks.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import BankTimeoutError, ConfigurationError, InfeasibleBankError

__all__ = [
    "Mode",
    "MaskBank",
    "DropoutAttachment",
    "count_possible_masks",
    "build_mask_bank",
    "sample_mask",
    "apply_traditional",
    "apply_controlled",
]

#: Rejection-loop budget per requested mask.
ITERATIONS_PER_MASK = 10**6


class Mode(str, enum.Enum):
    """Forward-pass mode.

    ``TRAIN`` and ``EVAL_MC`` draw masks; ``EVAL_DETERMINISTIC`` turns
    every dropout layer into the identity.
    """

    TRAIN = "train"
    EVAL_DETERMINISTIC = "eval_deterministic"
    EVAL_MC = "eval_mc"

    @property
    def stochastic(self) -> bool:
        return self is not Mode.EVAL_DETERMINISTIC


def count_possible_masks(size: int) -> int:
    """Number of binary masks of length `size` with at least one unit on.

    Returned as a Python ``int`` so large layers do not overflow.

    >>> count_possible_masks(3)
    7
    """
    if size < 1:
        raise ConfigurationError(f"layer size must be >= 1, got {size}")
    return 2**size - 1


def _check_rate(p: float) -> float:
    p = float(p)
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {p}")
    return p


@dataclass(frozen=True, eq=False)
class MaskBank:
    """Immutable set of distinct scaled dropout masks for one layer.

    Parameters
    ----------
    size : int
        Layer width ``S``.
    p : float
        Dropout rate the masks were drawn with.
    n_sample : int
        Number of stored masks.
    masks : ndarray of shape (n_sample, size)
        Entries are exactly ``0`` or ``1 / (1 - p)``.
    seed : int or None
        Seed passed to :func:`build_mask_bank`, kept for provenance.
    """

    size: int
    p: float
    n_sample: int
    masks: np.ndarray = field(repr=False)
    seed: int | None = None

    def __post_init__(self):
        masks = np.array(self.masks, dtype=np.float64)
        if masks.shape != (self.n_sample, self.size):
            raise ConfigurationError(
                f"mask array has shape {masks.shape}, expected {(self.n_sample, self.size)}"
            )
        scale = 1.0 / (1.0 - self.p)
        if not np.all((masks == 0.0) | (masks == scale)):
            raise ConfigurationError("mask entries must be 0 or 1/(1-p)")
        if np.any(~masks.any(axis=1)):
            raise ConfigurationError("bank contains an all-zero mask")
        if len({row.tobytes() for row in masks != 0}) != self.n_sample:
            raise ConfigurationError("bank masks are not pairwise distinct")
        masks.flags.writeable = False
        object.__setattr__(self, "masks", masks)

    @property
    def scale(self) -> float:
        return 1.0 / (1.0 - self.p)

    def __eq__(self, other):
        if not isinstance(other, MaskBank):
            return NotImplemented
        return (
            self.size == other.size
            and self.p == other.p
            and self.n_sample == other.n_sample
            and self.seed == other.seed
            and np.array_equal(self.masks, other.masks)
        )

    def __hash__(self):
        return hash((self.size, self.p, self.n_sample, self.seed, self.masks.tobytes()))

    def to_dict(self) -> dict:
        return {
            "S": self.size,
            "p": self.p,
            "n_sample": self.n_sample,
            "seed": self.seed,
            "masks": self.masks.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MaskBank":
        return cls(
            size=int(doc["S"]),
            p=float(doc["p"]),
            n_sample=int(doc["n_sample"]),
            masks=np.asarray(doc["masks"], dtype=np.float64),
            seed=doc.get("seed"),
        )

    def to_json(self, path=None) -> str:
        """Serialize to JSON; write to `path` too if given."""
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source) -> "MaskBank":
        """Load from a JSON string or from a path to a JSON file."""
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text()
        return cls.from_dict(json.loads(source))


def build_mask_bank(size: int, n_sample: int, p: float, seed=None) -> MaskBank:
    """Draw `n_sample` distinct non-zero scaled masks of length `size`.

    Each candidate is an element-wise Bernoulli(1 - p) draw divided by
    ``1 - p``. Duplicates and the all-zero vector are rejected and
    redrawn.

    Raises
    ------
    InfeasibleBankError
        If fewer than `n_sample` distinct non-zero masks exist. With
        ``p = 0`` only the all-ones mask can ever be drawn.
    BankTimeoutError
        If ``ITERATIONS_PER_MASK * n_sample`` draws do not fill the bank.
    """
    p = _check_rate(p)
    if n_sample < 1:
        raise ConfigurationError(f"n_sample must be >= 1, got {n_sample}")
    available = 1 if p == 0.0 else count_possible_masks(size)
    if n_sample > available:
        raise InfeasibleBankError(
            f"cannot store {n_sample} distinct masks for S={size}, p={p}: "
            f"only {available} exist"
        )

    rng = np.random.default_rng(seed)
    scale = 1.0 / (1.0 - p)
    keep = 1.0 - p
    seen = set()
    rows = []
    budget = ITERATIONS_PER_MASK * n_sample
    draws = 0
    while len(rows) < n_sample:
        if draws >= budget:
            raise BankTimeoutError(
                f"filled {len(rows)}/{n_sample} masks after {draws} draws "
                f"(S={size}, p={p})"
            )
        # Draw in chunks; a mask's identity is its on/off pattern.
        chunk = rng.random((min(max(n_sample, 16), budget - draws), size)) < keep
        for on in chunk:
            draws += 1
            if not on.any():
                continue
            key = on.tobytes()
            if key in seen:
                continue
            seen.add(key)
            rows.append(on * scale)
            if len(rows) == n_sample:
                break
    return MaskBank(size=size, p=p, n_sample=n_sample, masks=np.array(rows), seed=seed)


def sample_mask(bank: MaskBank, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Pick masks uniformly from `bank`.

    Returns one mask of shape ``(S,)`` when `n` is None, else an
    ``(n, S)`` stack of independent picks. The result is a copy.
    """
    idx = rng.integers(bank.n_sample, size=n)
    return bank.masks[idx].copy()


def _mask_rows(batch: int, per_example: bool) -> int:
    return batch if per_example else 1


def apply_traditional(y, p, mode, rng, per_example=True):
    """Inverted Bernoulli dropout on a batch of activations.

    Parameters
    ----------
    y : ndarray of shape (S,) or (batch, S)
    p : float
        Drop probability.
    mode : Mode or str
    rng : numpy.random.Generator
    per_example : bool
        Draw one mask per row (default) or one mask shared by the batch.

    Returns
    -------
    out : ndarray
        ``y * mask``, or `y` itself in deterministic mode.
    mask : ndarray or None
        The mask applied, ``None`` when dropout was off.
    """
    p = _check_rate(p)
    mode = Mode(mode)
    if not mode.stochastic:
        return y, None
    y = np.asarray(y, dtype=np.float64)
    rows = 1 if y.ndim == 1 else _mask_rows(y.shape[0], per_example)
    on = rng.random((rows, y.shape[-1])) < 1.0 - p
    mask = on / (1.0 - p)
    if y.ndim == 1:
        mask = mask[0]
    return y * mask, mask


def apply_controlled(y, bank: MaskBank, mode, rng, per_example=True):
    """Controlled dropout: multiply by a mask drawn uniformly from `bank`.

    Same return convention as :func:`apply_traditional`.
    """
    mode = Mode(mode)
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != bank.size:
        raise ConfigurationError(
            f"activation width {y.shape[-1]} does not match bank size {bank.size}"
        )
    if not mode.stochastic:
        return y, None
    if y.ndim == 1:
        mask = sample_mask(bank, rng)
    else:
        mask = sample_mask(bank, rng, _mask_rows(y.shape[0], per_example))
    return y * mask, mask


@dataclass(frozen=True)
class DropoutAttachment:
    """Dropout applied to the output of one dense layer.

    ``kind="controlled"`` requires a bank whose rate equals `p`.
    """

    kind: str
    p: float
    bank: MaskBank | None = None

    def __post_init__(self):
        if self.kind not in ("traditional", "controlled"):
            raise ConfigurationError(f"unknown dropout kind {self.kind!r}")
        _check_rate(self.p)
        if self.kind == "controlled":
            if self.bank is None:
                raise ConfigurationError("controlled dropout needs a mask bank")
            if self.bank.p != self.p:
                raise ConfigurationError(
                    f"bank rate {self.bank.p} differs from attachment rate {self.p}"
                )
        elif self.bank is not None:
            raise ConfigurationError("traditional dropout takes no mask bank")

    def check_width(self, width: int) -> None:
        if self.bank is not None and self.bank.size != width:
            raise ConfigurationError(
                f"bank size {self.bank.size} does not match layer width {width}"
            )

    def apply(self, y, mode, rng, per_example=True):
        if self.kind == "controlled":
            return apply_controlled(y, self.bank, mode, rng, per_example)
        return apply_traditional(y, self.p, mode, rng, per_example)
