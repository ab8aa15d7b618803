"""Experiment configuration, orchestration, result files and the ``guessbench`` CLI."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import exponents as ex
from . import simulator as sim
from .core import CapExceeded, DistortionSpec, as_sequence, check_enum_cap, seq_to_str
from .guessdist import make_distribution
from .lz import lz78_parse, code_length_of
from .ratedist import block_rate_distortion, rate_distortion

SCHEMA_VERSION = 1
MODES = ("rd", "exponent", "simulate", "parse", "sample", "compare")
CSV_COLUMNS = ["mode", "source", "distribution", "channel", "D", "n", "rho", "K", "method",
               "metric", "value", "stderr", "flags", "detail"]


def code_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


# ---------------------------------------------------------------------------
# configuration


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SourceConfig(_Strict):
    kind: Literal["iid", "markov", "individual"]
    P: list[float] | None = None
    transition: list[list[float]] | None = None
    order: int = 1
    x: str | None = None
    alphabet_size: int | None = None

    @model_validator(mode="after")
    def _fields_for_kind(self):
        need = {"iid": "P", "markov": "transition", "individual": "x"}[self.kind]
        if getattr(self, need) is None:
            raise ValueError(f"source kind {self.kind!r} requires field {need!r}")
        rows = [self.P] if self.kind == "iid" else self.transition if self.kind == "markov" else []
        for row in rows:
            if any(v < 0 for v in row) or abs(sum(row) - 1.0) > 1e-9:
                raise ValueError(f"{need} rows must be probability vectors, got {row}")
        return self

    @property
    def alphabet(self) -> int:
        if self.kind == "iid":
            return len(self.P)
        if self.kind == "markov":
            return len(self.transition[0])
        if self.alphabet_size is not None:
            return self.alphabet_size
        return max(2, max(int(c, 36) for c in self.x) + 1)

    def build(self, n: int) -> sim.Source:
        if self.kind == "iid":
            return sim.IidSource(self.P, n)
        if self.kind == "markov":
            return sim.MarkovSource(self.transition, n, self.order)
        src = sim.IndividualSource(self.x, self.alphabet)
        if src.n != n:
            raise ValueError(f"individual sequence has length {src.n}, not {n}")
        return src

    def letter_law(self) -> np.ndarray:
        if self.kind == "iid":
            return np.asarray(self.P, float)
        if self.kind == "markov":
            return sim.MarkovSource(self.transition, 1, self.order).stationary
        x = as_sequence(self.x, self.alphabet)
        return np.bincount(x, minlength=self.alphabet) / x.size

    def label(self) -> str:
        if self.kind == "iid":
            return "iid(" + ",".join(repr(p) for p in self.P) + ")"
        if self.kind == "markov":
            return f"markov{self.order}(" + ";".join(",".join(repr(v) for v in r) for r in self.transition) + ")"
        return f"individual({self.x})"


class DistortionConfig(_Strict):
    kind: Literal["hamming", "matrix"] = "hamming"
    size: int | None = None
    matrix: list[list[float]] | None = None
    level: float = Field(ge=0)

    @model_validator(mode="after")
    def _fields_for_kind(self):
        if self.kind == "matrix" and self.matrix is None:
            raise ValueError("distortion kind 'matrix' requires field 'matrix'")
        return self

    def build(self, size: int) -> DistortionSpec:
        if self.kind == "hamming":
            return DistortionSpec.hamming(self.size or size, self.level)
        return DistortionSpec(np.asarray(self.matrix, float), self.level)


class ChannelConfig(_Strict):
    W: list[list[float]]


class DistributionConfig(_Strict):
    kind: Literal["uniform", "type", "lz", "block_lz", "tilted", "fsm_block_lz"] = "type"
    l: int | None = None
    rho: float | None = None
    precision_bits: int = 16


class ExponentConfig(_Strict):
    kind: Literal["clean", "noisy", "block"] = "clean"
    method: str | None = None
    K: list[int] = [1]
    grid: int = ex.GRID_STEPS


class Caps(_Strict):
    enum_bits: float = 24
    guess_cap: int = sim.DEFAULT_CAP


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    mode: Literal["rd", "exponent", "simulate", "parse", "sample", "compare"]
    source: SourceConfig | None = None
    channel: ChannelConfig | None = None
    distortion: DistortionConfig | None = None
    distribution: DistributionConfig = DistributionConfig()
    exponent: ExponentConfig = ExponentConfig()
    game: Literal["clean", "noisy", "fsm"] = "clean"
    rho: list[float] = [1.0]
    n: list[int] = [8]
    trials: int = Field(1000, ge=1)
    samples: int = Field(10, ge=1)
    seed: int | None = None
    input: str | None = None
    output: str | None = None
    caps: Caps = Caps()

    @model_validator(mode="after")
    def _consistency(self):
        problems = []
        if self.mode in ("simulate", "sample") and self.seed is None:
            problems.append("seed: required for simulate and sample modes")
        if self.mode in ("rd", "exponent", "simulate", "compare"):
            if self.source is None:
                problems.append("source: required for this mode")
            if self.distortion is None:
                problems.append("distortion: required for this mode")
        if self.mode == "parse" and self.input is None and (self.source is None or self.source.x is None):
            problems.append("input: parse mode needs 'input' or an individual source")
        noisy = (self.mode == "exponent" and self.exponent.kind == "noisy") or \
                (self.mode == "simulate" and self.game == "noisy")
        if noisy and self.channel is None:
            problems.append("channel: required for the noisy setting")
        if any(r < 0 for r in self.rho):
            problems.append("rho: entries must be nonnegative")
        if any(n < 1 for n in self.n):
            problems.append("n: entries must be positive")
        if self.source is not None and self.distortion is not None:
            a = self.source.alphabet
            spec = self.distortion.build(a)
            if spec.n_src != a:
                problems.append(f"distortion: {spec.n_src} source symbols, source has {a}")
            if self.channel is not None:
                W = np.asarray(self.channel.W)
                if W.ndim != 2 or W.shape[1] != a:
                    problems.append(f"channel: output alphabet must match the source ({a})")
                if spec.n_rec != a:
                    problems.append("distortion: must be square on the channel output alphabet")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    data = json.loads(Path(path).read_text())
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.model_validate(data)


def format_errors(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "config"
        out.append(f"{loc}: {e['msg']}")
    return out


# ---------------------------------------------------------------------------
# results


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class ResultTable:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.rows: list[dict] = []

    def add(self, metric: str, value, stderr=None, flags: dict[str, str] | None = None,
            detail: str = "", **keys):
        row = {
            "mode": self.cfg.mode,
            "source": self.cfg.source.label() if self.cfg.source else "",
            "distribution": self.cfg.distribution.kind,
            "channel": json.dumps(self.cfg.channel.W) if self.cfg.channel else "",
            "D": self.cfg.distortion.level if self.cfg.distortion else None,
            "n": None, "rho": None, "K": None, "method": None,
            "metric": metric,
            "value": None if value is None else float(value),
            "stderr": None if stderr is None else float(stderr),
            "flags": "|".join(f"{k}:{v}" for k, v in sorted((flags or {}).items())),
            "detail": detail,
        }
        row.update(keys)
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# modes


def _spec(cfg: ExperimentConfig) -> DistortionSpec:
    return cfg.distortion.build(cfg.source.alphabet)


def _distribution(cfg: ExperimentConfig, n: int, alpha: int, rho: float | None = None):
    dc = cfg.distribution
    params = {}
    if dc.kind == "block_lz":
        params["l"] = dc.l or n
    if dc.kind == "tilted":
        params["base"] = cfg.source.letter_law()
        params["rho"] = dc.rho if dc.rho is not None else (rho if rho is not None else cfg.rho[0])
    if dc.kind == "fsm_block_lz":
        raise ValueError("fsm_block_lz is a machine, not a distribution")
    return make_distribution(dc.kind, n, alpha, **params)


def _run_rd(cfg, table):
    spec = _spec(cfg)
    src = cfg.source
    for K in cfg.exponent.K:
        if K == 1:
            sol = rate_distortion(src.letter_law(), spec)
        else:
            sol = block_rate_distortion(src.build(K).block_marginal(K), spec, K)
        flags = {} if sol.converged else {"nonconverged": "iteration cap reached"}
        table.add("rate_bits_per_symbol", sol.rate / K, flags=flags, K=K, method="blahut-arimoto")


def _run_exponent(cfg, table):
    spec = _spec(cfg)
    ec = cfg.exponent
    for rho in cfg.rho:
        if ec.kind == "clean":
            method = ec.method or "primal"
            res = ex.clean_exponent(cfg.source.letter_law(), spec, rho, grid=ec.grid, method=method)
            table.add("exponent_bits", res.value, flags=res.flags, rho=rho, K=1, method=res.method,
                      detail=_vec(res.argmax_Q))
        elif ec.kind == "noisy":
            setup = ex.NoisySetup(cfg.source.letter_law(), np.asarray(cfg.channel.W), spec, rho)
            res = ex.noisy_exponent(setup, method=ec.method or "alt1", grid=ec.grid)
            table.add("exponent_bits", res.value, flags=res.flags, rho=rho, method=res.method,
                      detail=_vec(res.argmax_Q))
        else:
            for K in ec.K:
                pk = cfg.source.build(K).block_marginal(K)
                res = ex.block_exponent(pk, spec, K, rho, method=ec.method or "dual")
                table.add("exponent_bits", res.value, flags=res.flags, rho=rho, K=K,
                          method=res.method)


def _vec(v) -> str:
    return "" if v is None else " ".join(f"{float(t):.12g}" for t in v)


def _exponent_value(cfg, spec, rho) -> float:
    ec = cfg.exponent
    if ec.kind == "noisy":
        setup = ex.NoisySetup(cfg.source.letter_law(), np.asarray(cfg.channel.W), spec, rho)
        return ex.noisy_exponent(setup, method=ec.method or "alt1").value
    if ec.kind == "block" or cfg.source.kind == "markov":
        K = max(ec.K)
        return ex.block_exponent(cfg.source.build(K).block_marginal(K), spec, K, rho).value
    return ex.clean_exponent(cfg.source.letter_law(), spec, rho, grid=ec.grid,
                             method=ec.method or "primal").value


def _run_compare(cfg, table):
    spec = _spec(cfg)
    for n in cfg.n:
        check_enum_cap(cfg.source.alphabet, n, cfg.caps.enum_bits)
    for rho in cfg.rho:
        target = _exponent_value(cfg, spec, rho)
        table.add("exponent_bits", target, rho=rho, method=cfg.exponent.kind)
        gaps = []
        for n in cfg.n:
            src = cfg.source.build(n)
            dist = _distribution(cfg, n, spec.n_rec if cfg.channel is None else len(cfg.channel.W), rho)
            if cfg.exponent.kind == "noisy":
                val = ex.noisy_finite_n_reference(src.law(n, cfg.caps.enum_bits), dist,
                                                  np.asarray(cfg.channel.W), spec, rho)
            else:
                val = ex.finite_n_reference(src.law(n, cfg.caps.enum_bits), dist, spec, rho,
                                            cfg.caps.enum_bits)
            gap = abs(val - target) if math.isfinite(val) else math.inf
            gaps.append(gap)
            table.add("finite_n_bits", val, rho=rho, n=n)
            table.add("gap_bits", gap, rho=rho, n=n)
        trend = {} if all(g2 <= g1 + 1e-12 for g1, g2 in zip(gaps, gaps[1:])) else \
            {"nonmonotone": "gap does not shrink at every step"}
        decreasing = len(gaps) < 2 or gaps[-1] <= gaps[0]
        table.add("gap_trend_last_le_first", 1.0 if decreasing else 0.0, flags=trend, rho=rho)


def _run_simulate(cfg, table, threads):
    spec = _spec(cfg)
    for n in cfg.n:
        src = cfg.source.build(n)
        W = np.asarray(cfg.channel.W) if cfg.channel else None
        if cfg.game == "fsm" or cfg.distribution.kind == "fsm_block_lz":
            l = cfg.distribution.l or n
            machine = sim.block_lz_machine(spec.n_rec, l, cfg.distribution.precision_bits)
            rec = sim.simulate_games(src, spec, cfg.trials, cfg.seed, "fsm", machine=machine,
                                     cap=cfg.caps.guess_cap, threads=threads)
        else:
            alpha = W.shape[0] if cfg.game == "noisy" else spec.n_rec
            dist = _distribution(cfg, n, alpha)
            rec = sim.simulate_games(src, spec, cfg.trials, cfg.seed, cfg.game, dist=dist, W=W,
                                     cap=cfg.caps.guess_cap, threads=threads)
        for rho in cfg.rho:
            est = sim.summarize(rec.guesses, rec.truncated, rho, rec.cap)
            table.add("moment", est.mean, est.stderr, flags=est.flags, n=n, rho=rho,
                      method=cfg.game, detail=f"trials={est.trials} capped={est.capped}")


def _run_parse(cfg, table):
    text = cfg.input if cfg.input is not None else cfg.source.x
    alpha = cfg.source.alphabet if cfg.source else None
    parse = lz78_parse(text, alpha)
    n = len(text)
    table.add("phrase_count", parse.c, n=n, detail=",".join(parse.phrase_strings()))
    table.add("lz_code_length_bits", code_length_of(parse), n=n,
              detail="" if parse.tail is None else f"tail={seq_to_str(parse.phrase_symbols(parse.tail))}")


def _run_sample(cfg, table, threads):
    alpha = cfg.source.alphabet if cfg.source else 2
    for n in cfg.n:
        dist = _distribution(cfg, n, alpha)

        parts = sim.map_trial_blocks(lambda rng, start, count: dist.sample_many(rng, count),
                                     cfg.samples, cfg.seed, threads)
        normalized = getattr(dist, "normalized", True)
        flags = {} if normalized else {"unnormalized": "weight is the lower bound 2^-LZ"}
        for i, s in enumerate(np.concatenate(parts)):
            table.add("sample_weight", dist.weight(s), flags=flags, n=n, detail=seq_to_str(s),
                      method=f"draw{i}")


def run(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    """Execute one experiment and return its result table (nothing is written)."""
    table = ResultTable(cfg)
    if cfg.mode == "rd":
        _run_rd(cfg, table)
    elif cfg.mode == "exponent":
        _run_exponent(cfg, table)
    elif cfg.mode == "simulate":
        _run_simulate(cfg, table, threads)
    elif cfg.mode == "parse":
        _run_parse(cfg, table)
    elif cfg.mode == "sample":
        _run_sample(cfg, table, threads)
    else:
        _run_compare(cfg, table)
    return table


def compare(cfg: ExperimentConfig) -> ResultTable:
    return run(cfg.model_copy(update={"mode": "compare"}))


def write_results(table: ResultTable, out: str | Path, wall_time: float, threads: int) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.to_csv())
    meta = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": table.cfg.config_hash(),
        "code_version": code_version(),
        "wall_time_s": wall_time,
        "threads": threads,
        "rows": len(table.rows),
        "config": table.cfg.model_dump(mode="json"),
    }
    meta_path = out.with_suffix(".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta_path


# ---------------------------------------------------------------------------
# CLI


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guessbench", description="Guesswork under a distortion constraint.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", default=None, help="CSV output path (metadata goes next to it)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, mode=args.mode, seed=args.seed,
                          output=args.out)
    except ValidationError as err:
        for line in format_errors(err):
            print(f"config error: {line}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        table = run(cfg, threads=max(1, args.threads))
    except CapExceeded as err:
        print(f"cap exceeded: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"invalid experiment: {err}", file=sys.stderr)
        return 2
    wall = time.perf_counter() - t0
    if cfg.output:
        write_results(table, cfg.output, wall, args.threads)
    else:
        sys.stdout.write(table.to_csv())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
