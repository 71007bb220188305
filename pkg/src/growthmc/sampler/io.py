"""Columnar on-disk format for Draws.

A fit directory holds one CSV per chain (``chain_<k>.csv``) whose header
lists the 11 population parameters followed by ``u_a[<patient_id>]`` and
``u_b[<patient_id>]`` per patient, plus ``draws_meta.json`` with the
config echo, prior, patient covariates, standardization constants and
dataset fingerprint. Values are written with 17 significant digits so the
round-trip is exact.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .. import __version__
from ..data import Standardization
from ..errors import FitStateError
from ..model import N_THETA, THETA_NAMES, PriorSpec
from . import Chain, Draws, McmcConfig

META_NAME = "draws_meta.json"
FORMAT_VERSION = 1


def chain_filename(chain_index: int) -> str:
    return f"chain_{chain_index}.csv"


def _columns(patient_ids) -> list[str]:
    cols = list(THETA_NAMES)
    for pid in patient_ids:
        cols.append(f"u_a[{pid}]")
        cols.append(f"u_b[{pid}]")
    return cols


def write_draws(draws: Draws, outdir: str | os.PathLike, prior: PriorSpec) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for chain in draws.chains:
        path = outdir / chain_filename(chain.chain_index)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_columns(draws.patient_ids))
            flat_u = chain.u.reshape(chain.n_draws, -1)
            for s in range(chain.n_draws):
                row = [f"{v:.17g}" for v in chain.theta[s]]
                row.extend(f"{v:.17g}" for v in flat_u[s])
                writer.writerow(row)
    meta = {
        "format": FORMAT_VERSION,
        "tool_version": __version__,
        "config": draws.config.to_dict(),
        "prior": prior.to_dict(),
        "theta_names": list(THETA_NAMES),
        "patients": [
            {"id": pid, "gender": g, "age": age}
            for pid, g, age in zip(
                draws.patient_ids, draws.patient_gender, draws.patient_age
            )
        ],
        "standardization": draws.standardization.to_dict(),
        "dataset_fingerprint": draws.dataset_fingerprint,
        "n_draws_per_chain": draws.n_draws_per_chain,
        "acceptance": {
            "theta": [c.accept_theta.tolist() for c in draws.chains],
            "u": [c.accept_u.tolist() for c in draws.chains],
            "shear": [c.accept_shear.tolist() for c in draws.chains],
        },
    }
    with open(outdir / META_NAME, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_draws(fitdir: str | os.PathLike) -> tuple[Draws, PriorSpec]:
    fitdir = Path(fitdir)
    meta_path = fitdir / META_NAME
    if not meta_path.is_file():
        raise FitStateError(f"{fitdir} is not a fit directory (missing {META_NAME})")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format") != FORMAT_VERSION:
        raise FitStateError(f"unsupported draws format {meta.get('format')!r}")

    config = McmcConfig.from_dict(meta["config"])
    prior = PriorSpec.from_dict(meta["prior"])
    patient_ids = tuple(p["id"] for p in meta["patients"])
    expected_cols = _columns(patient_ids)
    n = len(patient_ids)

    chains = []
    acc_theta = meta["acceptance"]["theta"]
    acc_u = meta["acceptance"]["u"]
    acc_shear = meta["acceptance"]["shear"]
    for k in range(config.n_chains):
        path = fitdir / chain_filename(k)
        if not path.is_file():
            raise FitStateError(f"missing chain file {path}")
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != expected_cols:
                raise FitStateError(f"{path}: unexpected columns")
            rows = np.array([[float(v) for v in row] for row in reader])
        if rows.size == 0:
            rows = rows.reshape(0, len(expected_cols))
        chains.append(
            Chain(
                theta=rows[:, :N_THETA],
                u=rows[:, N_THETA:].reshape(rows.shape[0], n, 2),
                accept_theta=np.asarray(acc_theta[k], dtype=float),
                accept_u=np.asarray(acc_u[k], dtype=float),
                accept_shear=np.asarray(acc_shear[k], dtype=float),
                chain_index=k,
            )
        )

    draws = Draws(
        chains=chains,
        config=config,
        patient_ids=patient_ids,
        patient_gender=tuple(p["gender"] for p in meta["patients"]),
        patient_age=tuple(float(p["age"]) for p in meta["patients"]),
        standardization=Standardization.from_dict(meta["standardization"]),
        dataset_fingerprint=meta["dataset_fingerprint"],
    )
    return draws, prior
