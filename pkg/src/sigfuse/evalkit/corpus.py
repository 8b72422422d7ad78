"""Signature corpora: in-memory model, JSON manifest, and a seeded synthetic generator.

The generator draws one "style" per subject: a handful of smooth pen strokes,
each a cubic spline through random control points, with a pressure profile
that drives both pen width and ink darkness. Genuine samples perturb the
style slightly. Forgeries trace a victim's style with larger perturbations
and a flat, uniform pen pressure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import splev, splprep

from ..errors import ProtocolError
from ..raster import read_image, write_pgm

MANIFEST_VERSION = "sigfuse-corpus/1"


@dataclass(frozen=True)
class Sample:
    subject_id: str
    sample_id: str
    genuine: bool = True
    victim_id: str | None = None  # forged subject, for forgery samples
    image: np.ndarray | None = field(default=None, repr=False, compare=False)
    path: str | None = None

    def load(self) -> np.ndarray:
        if self.image is not None:
            return self.image
        if self.path is None:
            raise ProtocolError(f"sample {self.subject_id}/{self.sample_id} has neither image nor path")
        return read_image(self.path)


@dataclass(frozen=True)
class Corpus:
    samples: tuple[Sample, ...]

    def genuine_subjects(self) -> list[str]:
        return sorted({s.subject_id for s in self.samples if s.genuine})

    def forger_subjects(self) -> list[str]:
        return sorted({s.subject_id for s in self.samples if not s.genuine})

    def samples_of(self, subject_id: str) -> list[Sample]:
        return [s for s in self.samples if s.subject_id == subject_id]

    def sample_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.samples:
            counts[s.subject_id] = counts.get(s.subject_id, 0) + 1
        return counts

    def validate(self) -> None:
        genuine = set(self.genuine_subjects())
        if len(genuine) < 2:
            raise ProtocolError(f"identification needs at least 2 genuine subjects, got {len(genuine)}")
        for s in self.samples:
            if not s.genuine and s.victim_id not in genuine:
                raise ProtocolError(f"forgery {s.subject_id}/{s.sample_id} targets unknown subject {s.victim_id!r}")
        seen = set()
        for s in self.samples:
            key = (s.subject_id, s.sample_id)
            if key in seen:
                raise ProtocolError(f"duplicate sample {s.subject_id}/{s.sample_id}")
            seen.add(key)

    # -- manifest -----------------------------------------------------------

    def to_manifest(self) -> dict:
        subjects: dict[str, dict] = {}
        for s in self.samples:
            entry = subjects.setdefault(s.subject_id, {"subject_id": s.subject_id, "genuine": s.genuine, "samples": []})
            entry["samples"].append({"sample_id": s.sample_id, "path": s.path, "victim_id": s.victim_id})
        return {"version": MANIFEST_VERSION, "subjects": list(subjects.values())}

    @classmethod
    def from_manifest(cls, manifest: dict, root: Path | None = None) -> "Corpus":
        if manifest.get("version") != MANIFEST_VERSION:
            raise ProtocolError(f"unsupported manifest version {manifest.get('version')!r}")
        samples = []
        for subj in manifest["subjects"]:
            for item in subj["samples"]:
                path = item.get("path")
                if path is not None and root is not None and not Path(path).is_absolute():
                    path = str(root / path)
                samples.append(Sample(
                    subject_id=str(subj["subject_id"]),
                    sample_id=str(item["sample_id"]),
                    genuine=bool(subj.get("genuine", True)),
                    victim_id=item.get("victim_id"),
                    path=path,
                ))
        return cls(tuple(samples))

    @classmethod
    def load(cls, manifest_path) -> "Corpus":
        manifest_path = Path(manifest_path)
        try:
            data = json.loads(manifest_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"cannot read manifest {manifest_path}: {exc}") from exc
        return cls.from_manifest(data, root=manifest_path.parent)

    def write(self, out_dir) -> Path:
        """Write every raster as PGM plus ``manifest.json``; paths are stored relative."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for s in self.samples:
            rel = f"{s.subject_id}_{s.sample_id}.pgm"
            write_pgm(out_dir / rel, s.load())
            written.append(Sample(s.subject_id, s.sample_id, s.genuine, s.victim_id, path=rel))
        manifest = Corpus(tuple(written)).to_manifest()
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=1))
        return path


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class SynthConfig:
    width: int = 640
    height: int = 320
    genuine_jitter: float = 4.0   # control-point noise, pixels
    forgery_jitter: float = 7.0
    scale_jitter: float = 0.06    # std of the relative scale change
    shift_jitter: float = 12.0    # std of the translation, pixels
    paper_level: int = 242
    paper_noise: float = 3.0
    salt_pepper: float = 0.0005


@dataclass(frozen=True)
class _Stroke:
    ctrl: np.ndarray       # (n, 2) control points, x then y
    width: float           # base pen radius
    phase: float
    freq: float
    dark: int              # ink intensity at full pressure
    light: int             # ink intensity at zero pressure


def _draw_style(rng: np.random.Generator, cfg: SynthConfig) -> list[_Stroke]:
    n_strokes = int(rng.integers(2, 6))
    left = cfg.width * rng.uniform(0.08, 0.2)
    right = cfg.width * rng.uniform(0.75, 0.92)
    mid_y = cfg.height * rng.uniform(0.4, 0.6)
    amp = cfg.height * rng.uniform(0.12, 0.3)
    edges = np.sort(rng.uniform(left, right, size=n_strokes - 1))
    starts = np.concatenate([[left], edges])
    ends = np.concatenate([edges, [right]])
    strokes = []
    for x0, x1 in zip(starts, ends):
        n_ctrl = int(rng.integers(4, 8))
        span = max(x1 - x0, 30.0)
        # evenly spread knots keep the spline from looping back on jitter
        u = (np.arange(n_ctrl) + rng.uniform(-0.25, 0.25, n_ctrl)) / (n_ctrl - 1)
        xs = x0 + np.clip(u, 0.0, 1.0) * span * rng.uniform(1.0, 1.3)
        ys = mid_y + rng.uniform(-amp, amp, n_ctrl) * rng.uniform(0.5, 1.0)
        strokes.append(_Stroke(
            ctrl=np.column_stack([xs, ys]),
            width=float(rng.uniform(1.5, 3.5)),
            phase=float(rng.uniform(0, 2 * np.pi)),
            freq=float(rng.uniform(1.0, 4.0)),
            dark=int(rng.integers(10, 50)),
            light=int(rng.integers(120, 170)),
        ))
    return strokes


def _sample_curve(ctrl: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dense points along a smooth spline through the control points, plus curve parameter."""
    k = min(3, ctrl.shape[0] - 1)
    tck, _ = splprep([ctrl[:, 0], ctrl[:, 1]], k=k, s=0)
    coarse = np.column_stack(splev(np.linspace(0, 1, 64), tck))
    length = np.sum(np.linalg.norm(np.diff(coarse, axis=0), axis=1))
    t = np.linspace(0, 1, max(16, int(length * 1.5)))
    return np.column_stack(splev(t, tck)), t


def _render(strokes: list[tuple[_Stroke, np.ndarray, bool]], cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    h, w = cfg.height, cfg.width
    img = cfg.paper_level + rng.normal(0.0, cfg.paper_noise, size=(h, w))
    img = np.clip(np.rint(img), 0, 255)
    flat = img.ravel()
    for stroke, ctrl, uniform in strokes:
        pts, t = _sample_curve(ctrl)
        if uniform:
            pressure = np.full(t.shape, 0.55)
        else:
            pressure = 0.5 + 0.5 * np.sin(stroke.freq * 2 * np.pi * t + stroke.phase)
        radius = stroke.width * (0.6 + 0.8 * pressure)
        value = stroke.light + (stroke.dark - stroke.light) * pressure
        reach = int(np.ceil(radius.max()))
        cx = np.rint(pts[:, 0]).astype(np.int64)
        cy = np.rint(pts[:, 1]).astype(np.int64)
        for dy in range(-reach, reach + 1):
            for dx in range(-reach, reach + 1):
                hit = dx * dx + dy * dy <= radius * radius
                x, y = cx + dx, cy + dy
                hit &= (x >= 0) & (x < w) & (y >= 0) & (y < h)
                np.minimum.at(flat, y[hit] * w + x[hit], value[hit])
    img = flat.reshape(h, w)
    noise = rng.uniform(size=(h, w))
    img[noise < cfg.salt_pepper / 2] = 0
    img[noise > 1 - cfg.salt_pepper / 2] = 255
    return img.astype(np.uint8)


def _perturb(style: list[_Stroke], jitter: float, cfg: SynthConfig, rng: np.random.Generator) -> list[np.ndarray]:
    scale = 1.0 + rng.normal(0.0, cfg.scale_jitter)
    shift = rng.normal(0.0, cfg.shift_jitter, size=2)
    centre = np.array([cfg.width / 2, cfg.height / 2])
    out = []
    for s in style:
        c = s.ctrl + rng.normal(0.0, jitter, size=s.ctrl.shape)
        out.append((c - centre) * scale + centre + shift)
    return out


def synth_corpus(n_subjects: int, n_samples: int, n_forger_subjects: int, seed: int,
                 cfg: SynthConfig = SynthConfig()) -> Corpus:
    """Seeded synthetic corpus of raw gray scans.

    Genuine subjects are ``s000, s001, ...``; forger ``fNNN`` imitates
    ``s{NNN mod n_subjects}``.
    """
    if n_subjects < 1 or n_samples < 1 or n_forger_subjects < 0:
        raise ProtocolError("subject and sample counts must be positive")
    root = np.random.SeedSequence(seed)
    style_seeds, sample_seeds, forger_seeds = root.spawn(3)
    subject_ids = [f"s{i:03d}" for i in range(n_subjects)]
    styles = [_draw_style(np.random.default_rng(ss), cfg) for ss in style_seeds.spawn(n_subjects)]

    samples = []
    for sid, style, ss in zip(subject_ids, styles, sample_seeds.spawn(n_subjects)):
        for j, rs in enumerate(ss.spawn(n_samples)):
            rng = np.random.default_rng(rs)
            ctrls = _perturb(style, cfg.genuine_jitter, cfg, rng)
            img = _render([(s, c, False) for s, c in zip(style, ctrls)], cfg, rng)
            samples.append(Sample(sid, f"g{j:02d}", True, None, image=img))

    for f, fs in enumerate(forger_seeds.spawn(n_forger_subjects)):
        victim = f % n_subjects
        style = styles[victim]
        for j, rs in enumerate(fs.spawn(n_samples)):
            rng = np.random.default_rng(rs)
            ctrls = _perturb(style, cfg.forgery_jitter, cfg, rng)
            img = _render([(s, c, True) for s, c in zip(style, ctrls)], cfg, rng)
            samples.append(Sample(f"f{f:03d}", f"k{j:02d}", False, subject_ids[victim], image=img))
    return Corpus(tuple(samples))
