"""Verification protocols: corpus partitions and genuine/impostor pairs.

Three protocols are supported. Close-World (CW) keeps every identity in
both splits and sends the last k samples of each identity to test.
Open-World (OW) splits the identity set itself, first k identities to
train. Complete uses everything in a single all-against-all split.
Identity means (subject_id, eye) throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import SampleRecord, identities

PROTOCOLS = ("CW", "OW", "Complete")

PAIR_DTYPE = np.dtype([("a", "<u4"), ("b", "<u4"), ("label", "u1")])


class InfeasibleRuleError(ValueError):
    pass


@dataclass(frozen=True)
class SplitRule:
    """How to cut a corpus: trailing samples per identity (CW) or leading
    identity count (OW). Complete needs no rule."""

    cw_test_per_identity: int | None = None
    ow_train_identities: int | None = None


@dataclass(frozen=True)
class PartitionSpec:
    protocol: str  # CW | OW | Complete
    split: str  # train | test | complete
    member_sample_ids: tuple[str, ...]
    member_identities: tuple[tuple[str, str], ...]  # parallel to member_sample_ids
    identity_count: int

    def __len__(self) -> int:
        return len(self.member_sample_ids)


@dataclass(frozen=True)
class PairList:
    """All unordered comparison pairs of one partition.

    sample_ids is the canonical (lexicographically sorted) table; index
    pairs refer into it with a < b. Genuine means same identity.
    """

    sample_ids: tuple[str, ...]
    genuine_idx: np.ndarray  # (G, 2) uint32
    impostor_idx: np.ndarray  # (I, 2) uint32

    @property
    def counts(self) -> tuple[int, int]:
        return (len(self.genuine_idx), len(self.impostor_idx))

    @property
    def genuine(self) -> list[tuple[str, str]]:
        return [(self.sample_ids[a], self.sample_ids[b]) for a, b in self.genuine_idx]

    @property
    def impostor(self) -> list[tuple[str, str]]:
        return [(self.sample_ids[a], self.sample_ids[b]) for a, b in self.impostor_idx]


def _spec(protocol, split, records) -> PartitionSpec:
    idents = tuple(rec.identity for rec in records)
    return PartitionSpec(
        protocol=protocol,
        split=split,
        member_sample_ids=tuple(rec.sample_id for rec in records),
        member_identities=idents,
        identity_count=len(set(idents)),
    )


def make_partition(records, protocol: str, rule: SplitRule | None = None):
    """Split records per protocol; (train, test) for CW/OW, one spec for Complete.

    Sample order within an identity is manifest (input) order; identities
    are ranked by first appearance. CW requires every identity to keep at
    least one training sample after the trailing quota is removed.
    """
    records = list(records)
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if not records:
        raise ValueError("no records to partition")

    if protocol == "Complete":
        return _spec("Complete", "complete", records)

    if protocol == "CW":
        if rule is None or rule.cw_test_per_identity is None:
            raise InfeasibleRuleError("CW needs cw_test_per_identity")
        quota = rule.cw_test_per_identity
        if quota < 1:
            raise InfeasibleRuleError("cw_test_per_identity must be >= 1")
        by_identity: dict[tuple[str, str], list[SampleRecord]] = {}
        for rec in records:
            by_identity.setdefault(rec.identity, []).append(rec)
        for ident, members in by_identity.items():
            if len(members) <= quota:
                raise InfeasibleRuleError(
                    f"identity {ident} has {len(members)} samples; cannot hold out {quota}"
                )
        test_ids = {m.sample_id for members in by_identity.values() for m in members[-quota:]}
        train = [rec for rec in records if rec.sample_id not in test_ids]
        test = [rec for rec in records if rec.sample_id in test_ids]
        return _spec("CW", "train", train), _spec("CW", "test", test)

    if rule is None or rule.ow_train_identities is None:
        raise InfeasibleRuleError("OW needs ow_train_identities")
    order = identities(records)
    k = rule.ow_train_identities
    if not 0 < k < len(order):
        raise InfeasibleRuleError(
            f"ow_train_identities must leave both halves nonempty (got {k} of {len(order)})"
        )
    train_set = set(order[:k])
    train = [rec for rec in records if rec.identity in train_set]
    test = [rec for rec in records if rec.identity not in train_set]
    return _spec("OW", "train", train), _spec("OW", "test", test)


def enumerate_pairs(split: PartitionSpec) -> PairList:
    """Every unordered sample pair of a partition, labeled genuine/impostor.

    Pairs are canonicalized by lexicographic sample_id order (a < b) and
    emitted sorted, so the result is identical for any input record order.
    """
    if len(split) == 0:
        raise ValueError("cannot enumerate pairs of an empty partition")
    order = sorted(range(len(split)), key=lambda k: split.member_sample_ids[k])
    sample_ids = tuple(split.member_sample_ids[k] for k in order)
    ident_of = {}
    codes = np.fromiter(
        (ident_of.setdefault(split.member_identities[k], len(ident_of)) for k in order),
        dtype=np.int64,
        count=len(order),
    )
    iu, ju = np.triu_indices(len(codes), k=1)
    same = codes[iu] == codes[ju]
    genuine = np.stack([iu[same], ju[same]], axis=1).astype(np.uint32)
    impostor = np.stack([iu[~same], ju[~same]], axis=1).astype(np.uint32)
    return PairList(sample_ids=sample_ids, genuine_idx=genuine, impostor_idx=impostor)


def pair_counts(split: PartitionSpec) -> tuple[int, int]:
    """Closed-form genuine/impostor counts without materializing pairs."""
    sizes: dict[tuple[str, str], int] = {}
    for ident in split.member_identities:
        sizes[ident] = sizes.get(ident, 0) + 1
    n = len(split)
    genuine = sum(k * (k - 1) // 2 for k in sizes.values())
    return genuine, n * (n - 1) // 2 - genuine


def write_partition(split: PartitionSpec, path) -> None:
    payload = {
        "protocol": split.protocol,
        "split": split.split,
        "sample_ids": list(split.member_sample_ids),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def read_partition(path, records) -> PartitionSpec:
    """Rebuild a PartitionSpec from its JSON file plus the source records."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    by_id = {rec.sample_id: rec for rec in records}
    try:
        members = [by_id[sid] for sid in payload["sample_ids"]]
    except KeyError as exc:
        raise ValueError(f"{path}: sample_id {exc.args[0]!r} not in manifest") from None
    return _spec(payload["protocol"], payload["split"], members)


def write_pairs(pairs: PairList, path) -> None:
    """Binary pair file: little-endian (u32 a, u32 b, u8 label) triples,
    genuine block (label 1) then impostor block (label 0), with a JSON
    sidecar at <path>.json holding the sample-id table and counts."""
    path = Path(path)
    g, i = pairs.counts
    rows = np.empty(g + i, dtype=PAIR_DTYPE)
    rows["a"][:g] = pairs.genuine_idx[:, 0]
    rows["b"][:g] = pairs.genuine_idx[:, 1]
    rows["label"][:g] = 1
    rows["a"][g:] = pairs.impostor_idx[:, 0]
    rows["b"][g:] = pairs.impostor_idx[:, 1]
    rows["label"][g:] = 0
    rows.tofile(path)
    sidecar = {
        "sample_ids": list(pairs.sample_ids),
        "genuine_count": g,
        "impostor_count": i,
        "order": "genuine-then-impostor",
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh)
        fh.write("\n")


def read_pairs(path) -> PairList:
    path = Path(path)
    with open(str(path) + ".json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    rows = np.fromfile(path, dtype=PAIR_DTYPE)
    g, i = sidecar["genuine_count"], sidecar["impostor_count"]
    if len(rows) != g + i:
        raise ValueError(f"{path}: expected {g + i} pair rows, found {len(rows)}")
    if not (rows["label"][:g] == 1).all() or not (rows["label"][g:] == 0).all():
        raise ValueError(f"{path}: pair rows out of genuine-then-impostor order")
    genuine = np.stack([rows["a"][:g], rows["b"][:g]], axis=1).astype(np.uint32)
    impostor = np.stack([rows["a"][g:], rows["b"][g:]], axis=1).astype(np.uint32)
    return PairList(
        sample_ids=tuple(sidecar["sample_ids"]), genuine_idx=genuine, impostor_idx=impostor
    )
