"""Scenario orchestration: config loading, the four desk-scale experiments,
aggregation, and CSV emission.

Result CSV header (stable):
    scenario,L,s_pn_dbchz,unbroken,trial,ue,variant,estimator,beamformer,se
variant is "calibrated" for the broken-TDD system and "no_phase_noise" /
"single_ap" for the benchmarks (estimator "-" there). Summary CSV header:
    scenario,L,s_pn_dbchz,unbroken,variant,estimator,beamformer,stat,value
with stat rows "mean", "se_mean", "n" and "q<p>" for the 100 evenly spaced
CDF quantiles (p = 0.005 .. 0.995).
"""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                      # Python 3.10
    import tomli as tomllib

from .config import (SystemConfig, dbm_to_normalized, derive_rng, mw_to_dbm,
                     sigma_nu_sq_from_level)
from .errors import DmimocalError, InvalidConfigError
from .simulate import run_trial

RESULT_HEADER = ("scenario", "L", "s_pn_dbchz", "unbroken", "trial", "ue",
                 "variant", "estimator", "beamformer", "se")
SUMMARY_HEADER = ("scenario", "L", "s_pn_dbchz", "unbroken", "variant",
                  "estimator", "beamformer", "stat", "value")
SCENARIO_NAMES = ("cdf_two_ap", "se_vs_frame_length", "se_vs_pn_level",
                  "se_vs_num_aps", "custom")
CDF_QUANTILES = (np.arange(1, 101) - 0.5) / 100.0


@dataclass(frozen=True)
class GridPoint:
    L: int
    s_pn_dbchz: float
    extra_unbroken_slots: int = 0
    F: Optional[int] = None


@dataclass(frozen=True)
class Scenario:
    name: str
    sweep: tuple                 # GridPoints
    baselines: tuple             # subset of {"no_phase_noise", "single_ap"}
    estimators: tuple            # subset of {"kalman", "direct"}
    beamformers: tuple           # subset of {"conj", "zf"}

    def __post_init__(self):
        if not self.sweep:
            raise InvalidConfigError("scenario sweep grid is empty")
        for b in self.baselines:
            if b not in ("no_phase_noise", "single_ap"):
                raise InvalidConfigError(f"unknown baseline {b!r}")
        for e in self.estimators:
            if e not in ("kalman", "direct"):
                raise InvalidConfigError(f"unknown estimator {e!r}")
        for bf in self.beamformers:
            if bf not in ("conj", "zf"):
                raise InvalidConfigError(f"unknown beamformer {bf!r}")


@dataclass
class ResultTable:
    header: tuple
    rows: list
    summary: list


def default_scenario(name: str, cfg: SystemConfig) -> Scenario:
    """The four experiment designs at desk scale."""
    s = cfg.s_pn_dbchz
    if name == "cdf_two_ap":
        return Scenario(name, (GridPoint(2, s, 0, F=1),),
                        ("no_phase_noise", "single_ap"), ("kalman",),
                        ("conj", "zf"))
    if name == "se_vs_frame_length":
        grid = tuple(GridPoint(l, s, u) for l in (2, 4) for u in (0, 1, 2, 4, 8))
        return Scenario(name, grid, (), ("kalman",), ("conj", "zf"))
    if name == "se_vs_pn_level":
        grid = tuple(GridPoint(l, sp, 0) for l in (2, 4, 16)
                     for sp in (-120.0, -100.0, -80.0))
        return Scenario(name, grid, (), ("kalman", "direct"), ("zf",))
    if name == "se_vs_num_aps":
        grid = tuple(GridPoint(l, s, 0) for l in (2, 3, 4, 6, 8, 12, 16))
        return Scenario(name, grid, (), ("kalman",), ("conj", "zf"))
    raise InvalidConfigError(f"unknown scenario {name!r} (choose from {SCENARIO_NAMES})")


_SYSTEM_KEYS = {f.name for f in dataclasses.fields(SystemConfig)}
_POWER_KEYS = {"rho_ue_mw", "rho_ap_mw", "rho_ue_dbm", "rho_ap_dbm", "noise_dbm"}


def load_config(path: Optional[str] = None):
    """Parse a TOML config into (SystemConfig, Scenario).

    Missing file/keys fall back to the built-in defaults. Radiated powers may
    be given in mW or dBm together with `noise_dbm`; they are normalized to
    the noise floor here so the inner modules see unit-noise powers.
    """
    data = {}
    if path:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise InvalidConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise InvalidConfigError(f"config parse error in {path}: {exc}") from exc

    sys_raw = dict(data.get("system", {}))
    unknown = set(sys_raw) - _SYSTEM_KEYS - _POWER_KEYS
    if unknown:
        raise InvalidConfigError(f"unknown [system] keys: {sorted(unknown)}")

    noise_dbm = float(sys_raw.pop("noise_dbm", -94.0))
    if "rho_ue_mw" in sys_raw:
        sys_raw["rho_UE"] = dbm_to_normalized(mw_to_dbm(float(sys_raw.pop("rho_ue_mw"))), noise_dbm)
    if "rho_ap_mw" in sys_raw:
        sys_raw["rho_AP"] = dbm_to_normalized(mw_to_dbm(float(sys_raw.pop("rho_ap_mw"))), noise_dbm)
    if "rho_ue_dbm" in sys_raw:
        sys_raw["rho_UE"] = dbm_to_normalized(float(sys_raw.pop("rho_ue_dbm")), noise_dbm)
    if "rho_ap_dbm" in sys_raw:
        sys_raw["rho_AP"] = dbm_to_normalized(float(sys_raw.pop("rho_ap_dbm")), noise_dbm)
    try:
        cfg = SystemConfig(**sys_raw)
    except TypeError as exc:
        raise InvalidConfigError(f"bad [system] value: {exc}") from exc

    scen_raw = dict(data.get("scenario", {}))
    name = scen_raw.pop("name", "cdf_two_ap")
    if name != "custom" and not scen_raw:
        return cfg, default_scenario(name, cfg)
    base = default_scenario("cdf_two_ap", cfg) if name == "custom" else \
        default_scenario(name, cfg)
    l_grid = scen_raw.pop("l_grid", None)
    s_grid = scen_raw.pop("s_pn_grid", None)
    u_grid = scen_raw.pop("unbroken_grid", None)
    sweep = base.sweep
    if l_grid or s_grid or u_grid:
        sweep = tuple(GridPoint(int(l), float(sp), int(u))
                      for l in (l_grid or [cfg.L])
                      for sp in (s_grid or [cfg.s_pn_dbchz])
                      for u in (u_grid or [cfg.extra_unbroken_slots]))
    scenario = Scenario(
        name,
        sweep,
        tuple(scen_raw.pop("baselines", base.baselines)),
        tuple(scen_raw.pop("estimators", base.estimators)),
        tuple(scen_raw.pop("beamformers", base.beamformers)),
    )
    if scen_raw:
        raise InvalidConfigError(f"unknown [scenario] keys: {sorted(scen_raw)}")
    return cfg, scenario


def _grid_config(cfg: SystemConfig, gp: GridPoint) -> SystemConfig:
    out = cfg.with_(L=gp.L, s_pn_dbchz=gp.s_pn_dbchz,
                    extra_unbroken_slots=gp.extra_unbroken_slots, F=gp.F,
                    M_min=None if cfg.M_min is None else min(cfg.M_min, gp.L * (gp.L - 1) // 2))
    if out.sigma_nu_sq_override is None:
        # Pin the per-sample variance from the swept spectrum level; the
        # printed constant chain is dimensionally inconsistent (see config).
        out = out.with_(sigma_nu_sq_override=sigma_nu_sq_from_level(
            out.s_pn_dbchz, out.delta_f, out.f_s))
    return out


def run_scenario(cfg: SystemConfig, scenario: Scenario,
                 progress: bool = False) -> ResultTable:
    """Execute every grid point and trial; deterministic given master_seed.

    RNG streams are keyed on (master_seed, L, unbroken, trial, purpose) — not
    on the spectrum level — so sweeps over oscillator quality reuse the same
    placements, channels, and underlying noise (coupled seeds), and removing
    one grid point never changes another's results.
    """
    rows = []
    for gp in scenario.sweep:
        gcfg = _grid_config(cfg, gp)
        for trial in range(gcfg.trials):
            def rng_for(purpose, _gp=gp, _trial=trial):
                return derive_rng(cfg.master_seed, _gp.L,
                                  _gp.extra_unbroken_slots, _trial, purpose)

            result = run_trial(
                gcfg, rng_for, estimators=scenario.estimators,
                beamformers=scenario.beamformers,
                include_single_ap="single_ap" in scenario.baselines,
                include_no_phase_noise="no_phase_noise" in scenario.baselines,
            )
            key = (scenario.name, gp.L, gp.s_pn_dbchz, gp.extra_unbroken_slots)
            for (est, bf), se in sorted(result.se.items()):
                for ue in range(gcfg.K):
                    rows.append(key + (trial, ue + 1, "calibrated", est, bf,
                                       float(se[ue])))
            for bf, se in sorted(result.se_single_ap.items()):
                for ue in range(gcfg.K):
                    rows.append(key + (trial, ue + 1, "single_ap", "-", bf,
                                       float(se[ue])))
            for bf, se in sorted(result.se_no_phase_noise.items()):
                for ue in range(gcfg.K):
                    rows.append(key + (trial, ue + 1, "no_phase_noise", "-", bf,
                                       float(se[ue])))
        if progress:
            print(f"[{scenario.name}] grid point L={gp.L} "
                  f"S_PN={gp.s_pn_dbchz} unbroken={gp.extra_unbroken_slots} done")
    table = ResultTable(RESULT_HEADER, rows, [])
    table.summary = aggregate(table, "mean") + aggregate(table, "cdf")
    return table


def aggregate(table: ResultTable, mode: str) -> list:
    """Summary rows per (grid point, variant, estimator, beamformer).

    mode "mean": mean, standard error of the mean, and count over the per-UE
    SE values. mode "cdf": the empirical quantiles at the 100 evenly spaced
    probabilities (j - 0.5)/100.
    """
    if not table.rows:
        raise DmimocalError("cannot aggregate an empty result table")
    if mode not in ("mean", "cdf"):
        raise InvalidConfigError(f"unknown aggregation mode {mode!r}")
    groups = {}
    for row in table.rows:
        key = row[:4] + row[6:9]
        groups.setdefault(key, []).append(row[9])
    out = []
    for key in sorted(groups, key=lambda k: tuple(map(str, k))):
        vals = np.asarray(groups[key])
        if mode == "mean":
            out.append(key + ("mean", float(vals.mean())))
            sem = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
            out.append(key + ("se_mean", sem))
            out.append(key + ("n", float(len(vals))))
        else:
            qs = np.quantile(vals, CDF_QUANTILES)
            out.extend(key + (f"q{p:.3f}", float(q))
                       for p, q in zip(CDF_QUANTILES, qs))
    return out


def write_results_csv(table: ResultTable, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_HEADER)
        for row in table.rows:
            writer.writerow([_fmt(v) for v in row])


def write_summary_csv(table: ResultTable, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for row in table.summary:
            writer.writerow([_fmt(v) for v in row])


def write_outputs(table: ResultTable, out_dir: str, scenario_name: str):
    os.makedirs(out_dir, exist_ok=True)
    res = os.path.join(out_dir, f"{scenario_name}_results.csv")
    summ = os.path.join(out_dir, f"{scenario_name}_summary.csv")
    write_results_csv(table, res)
    write_summary_csv(table, summ)
    return res, summ


def _fmt(v):
    return repr(v) if isinstance(v, float) else v
