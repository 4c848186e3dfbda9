"""Synthetic EHR corpora standing in for real hospital timelines.

A :class:`World` fixes diseases, their phenotype codes and symptom profiles.
:func:`generate_timelines` then draws patients, each with one disease and one
encounter-window scenario:

* ``A`` one coded visit followed by at least ``tau`` quiet days
* ``B`` two such episodes, far enough apart to resolve separately
* ``C`` a coded visit followed within ``tau`` days by a visit coded for a
  different disease (the first episode never resolves)
* ``D`` a coded visit with a same-code follow-up inside ``tau`` days
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ehr import Encounter, Phenotype, SymptomUniverse, Timeline, VisitClass
from .io import data_path, dumps_canonical, load_config

SCENARIOS = ("A", "B", "C", "D")

PRESENT_TEMPLATES = (
    "Patient reports {s}.",
    "Complains of {s}.",
    "{S} for {n} days.",
    "Positive for {s}.",
    "Endorses {s}.",
    "Presents with {s}.",
)
ABSENT_TEMPLATES = (
    "No {s}.",
    "Denies {s}.",
    "Negative for {s}.",
    "Patient does not have {s}.",
    "Without {s}.",
    "{S} is ruled out.",
)
CONFLICT_TEMPLATE = "Return to clinic if {s} develops."
FILLER = (
    "Seen in clinic today.",
    "Vitals reviewed.",
    "Medications reconciled.",
    "Plan discussed with patient.",
    "Follows up as needed.",
)
FOLLOWUP_FILLER = (
    "Follow-up visit.",
    "Labs reviewed.",
    "Imaging discussed.",
)


def _bundled_universe() -> SymptomUniverse:
    return SymptomUniverse.from_dict(load_config(data_path("symptoms.json")))


def make_universe(k_symptoms: int) -> SymptomUniverse:
    """First ``k_symptoms`` bundled names, padded with ``finding_NNN``."""
    base = _bundled_universe()
    names = list(base.symptoms[:k_symptoms])
    names += [f"finding_{i:03d}" for i in range(len(names), k_symptoms)]
    keep = set(names)
    syn = {s: c for s, c in base.synonym_map.items() if c in keep}
    return SymptomUniverse(tuple(names), syn)


@dataclass(frozen=True)
class DiseaseProfile:
    disease: str
    phenotype: Phenotype
    finding_probs: dict[str, float]
    negated_probs: dict[str, float]
    prevalence_weight: float

    def __post_init__(self):
        probs = list(self.finding_probs.values()) + list(self.negated_probs.values())
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError(f"{self.disease}: probabilities must lie in [0, 1]")
        if not any(p > 0 for p in self.finding_probs.values()):
            raise ValueError(f"{self.disease}: needs a symptom with positive probability")
        if self.prevalence_weight <= 0:
            raise ValueError(f"{self.disease}: prevalence weight must be positive")

    @property
    def support(self) -> frozenset[str]:
        return frozenset(s for s, p in self.finding_probs.items() if p > 0)

    def to_dict(self) -> dict:
        return {
            "disease": self.disease,
            "codes": sorted(self.phenotype.codes),
            "finding_probs": self.finding_probs,
            "negated_probs": self.negated_probs,
            "prevalence_weight": self.prevalence_weight,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiseaseProfile":
        return cls(d["disease"], Phenotype(d["disease"], frozenset(d["codes"])),
                   dict(d["finding_probs"]), dict(d["negated_probs"]),
                   float(d["prevalence_weight"]))


@dataclass(frozen=True)
class World:
    universe: SymptomUniverse
    profiles: tuple[DiseaseProfile, ...]
    overlap: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        names = [p.disease for p in self.profiles]
        if len(set(names)) != len(names):
            raise ValueError("disease names must be unique")
        seen: set[str] = set()
        for p in self.profiles:
            if not seen.isdisjoint(p.phenotype.codes):
                raise ValueError(f"phenotype codes of {p.disease} overlap another disease")
            seen |= p.phenotype.codes
            unknown = (set(p.finding_probs) | set(p.negated_probs)) - set(self.universe.symptoms)
            if unknown:
                raise ValueError(f"{p.disease}: symptoms outside universe: {sorted(unknown)[:3]}")

    @property
    def phenotypes(self) -> list[Phenotype]:
        return [p.phenotype for p in self.profiles]

    @property
    def diseases(self) -> list[str]:
        return [p.disease for p in self.profiles]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "overlap": self.overlap,
            "universe": self.universe.to_dict(),
            "profiles": [p.to_dict() for p in self.profiles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        return cls(SymptomUniverse.from_dict(d["universe"]),
                   tuple(DiseaseProfile.from_dict(p) for p in d["profiles"]),
                   float(d["overlap"]), int(d["seed"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(dumps_canonical(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "World":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def mean_pairwise_overlap(supports: list[frozenset[str]] | np.ndarray) -> float:
    """Mean over disease pairs of |S_i & S_j| / min(|S_i|, |S_j|)."""
    if isinstance(supports, np.ndarray):
        m = supports.astype(np.int64)
    else:
        names = sorted(set().union(*supports))
        idx = {s: i for i, s in enumerate(names)}
        m = np.zeros((len(supports), len(names)), dtype=np.int64)
        for r, sup in enumerate(supports):
            m[r, [idx[s] for s in sup]] = 1
    n = m.shape[0]
    if n < 2:
        return 0.0
    inter = m @ m.T
    sizes = m.sum(axis=1)
    denom = np.minimum.outer(sizes, sizes)
    iu = np.triu_indices(n, 1)
    return float(np.mean(inter[iu] / np.maximum(denom[iu], 1)))


def _shared_sets(rng_seed, cores: np.ndarray, k: int, s: int) -> np.ndarray:
    rng = np.random.default_rng(rng_seed)
    n = cores.shape[0]
    member = np.zeros((n, k), dtype=bool)
    for i in range(n):
        member[i, cores[i]] = True
        if s:
            free = np.flatnonzero(~member[i])
            member[i, rng.choice(free, size=s, replace=False)] = True
    return member


def generate_world(n_diseases: int, k_symptoms: int, overlap: float = 0.3,
                   prevalence_skew: float = 0.0, seed: int = 0, *,
                   core_size: int = 3, core_prob: tuple[float, float] = (0.15, 0.4),
                   mean_positive: float = 6.0, mean_negative: float = 4.0) -> World:
    """Random world with ``overlap`` mean pairwise symptom-support overlap.

    Each disease owns a private core block of symptoms; ``overlap > 0`` adds
    the same number of extra symptoms to every profile, drawn outside its
    core, with the count chosen so the realised mean pairwise overlap is as
    close as possible to the target. Prevalence weights follow
    ``rank ** -prevalence_skew`` over a random ranking.

    Core symptoms are mentioned with probability drawn from ``core_prob``.
    Shared symptoms follow a per-symptom popularity common to all diseases,
    jittered per disease and scaled so a case mentions about
    ``mean_positive`` present findings in total; low core probabilities
    therefore make diseases hard to tell apart.
    """
    if n_diseases < 1:
        raise ValueError("n_diseases must be >= 1")
    if k_symptoms < n_diseases:
        raise ValueError("k_symptoms must be >= n_diseases")
    if not 0.0 <= overlap <= 1.0:
        raise ValueError("overlap must lie in [0, 1]")
    if prevalence_skew < 0:
        raise ValueError("prevalence_skew must be >= 0")
    if core_size < 1 or mean_positive <= 0 or mean_negative < 0:
        raise ValueError("core_size and mean_positive must be positive")
    if not 0.0 < core_prob[0] <= core_prob[1] <= 1.0:
        raise ValueError("core_prob must be an increasing pair in (0, 1]")

    ss = np.random.SeedSequence(seed)
    s_layout, s_shared, s_probs = ss.spawn(3)
    rng = np.random.default_rng(s_layout)
    universe = make_universe(k_symptoms)
    k = k_symptoms
    c = max(1, min(core_size, k // n_diseases))
    perm = rng.permutation(k)
    cores = perm[: n_diseases * c].reshape(n_diseases, c)

    best_s, member = 0, _shared_sets(s_shared, cores, k, 0)
    if overlap > 0 and n_diseases > 1:
        best_err = abs(mean_pairwise_overlap(member) - overlap)
        lo, hi = 0, k - c
        # realised overlap grows with s; bisect then check neighbours
        while lo < hi:
            mid = (lo + hi) // 2
            if mean_pairwise_overlap(_shared_sets(s_shared, cores, k, mid)) < overlap:
                lo = mid + 1
            else:
                hi = mid
        for cand in {max(lo - 1, 0), lo}:
            m = _shared_sets(s_shared, cores, k, cand)
            err = abs(mean_pairwise_overlap(m) - overlap)
            if err < best_err:
                best_s, member, best_err = cand, m, err

    prng = np.random.default_rng(s_probs)
    ranks = prng.permutation(n_diseases) + 1
    weights = ranks.astype(float) ** (-prevalence_skew)
    popularity = prng.gamma(1.0, 1.0, size=k) + 0.05
    names = universe.symptoms
    profiles = []
    for i in range(n_diseases):
        core = cores[i]
        shared = np.setdiff1d(np.flatnonzero(member[i]), core)
        probs = {}
        core_p = prng.uniform(core_prob[0], core_prob[1], size=len(core))
        for j, p in zip(core, core_p):
            probs[names[j]] = float(p)
        budget = max(mean_positive - core_p.sum(), 0.5)
        if len(shared):
            raw = popularity[shared] * prng.uniform(0.5, 1.5, size=len(shared))
            sp = np.minimum(raw * budget / raw.sum(), 0.9)
            for j, p in zip(shared, sp):
                probs[names[int(j)]] = float(p)
        neg = {}
        outside = np.flatnonzero(~member[i])
        if len(outside) and mean_negative > 0:
            raw = popularity[outside] * prng.uniform(0.5, 1.5, size=len(outside))
            q = np.minimum(raw * mean_negative / raw.sum(), 0.9)
            for j, p in zip(outside, q):
                neg[names[int(j)]] = float(p)
        disease = f"disease_{i:03d}"
        codes = frozenset({f"SYN{i:03d}.0", f"SYN{i:03d}.1"})
        profiles.append(DiseaseProfile(disease, Phenotype(disease, codes),
                                       dict(sorted(probs.items())), neg,
                                       float(weights[i])))
    return World(universe, tuple(profiles), float(overlap), int(seed))


@dataclass(frozen=True)
class GenConfig:
    n_patients: int
    scenario_mix: dict[str, float] = field(
        default_factory=lambda: {"A": 0.6, "B": 0.15, "C": 0.1, "D": 0.15})
    tau: int = 30
    noise: float = 0.05
    seed: int = 0
    age_range: tuple[int, int] = (18, 50)
    synonym_rate: float = 0.3
    filler_sentences: int = 2

    def __post_init__(self):
        if self.n_patients < 0:
            raise ValueError("n_patients must be >= 0")
        mix = {k: float(v) for k, v in self.scenario_mix.items()}
        if set(mix) - set(SCENARIOS):
            raise ValueError(f"unknown scenarios {sorted(set(mix) - set(SCENARIOS))}")
        if any(v < 0 for v in mix.values()) or abs(sum(mix.values()) - 1.0) > 1e-9:
            raise ValueError("scenario_mix must be non-negative and sum to 1")
        if self.tau < 2:
            raise ValueError("tau must be >= 2")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")
        object.__setattr__(self, "scenario_mix", mix)

    def mix_vector(self) -> np.ndarray:
        return np.array([self.scenario_mix.get(s, 0.0) for s in SCENARIOS])


@dataclass(frozen=True)
class GeneratedPatient:
    timeline: Timeline
    disease: str
    scenario: str


class _NoteWriter:
    def __init__(self, world: World, cfg: GenConfig):
        self.world = world
        self.cfg = cfg
        self.surfaces: dict[str, list[str]] = {s: [] for s in world.universe.symptoms}
        for surface, canon in sorted(world.universe.synonym_map.items()):
            self.surfaces[canon].append(surface)

    def surface(self, symptom: str, rng) -> str:
        alts = self.surfaces[symptom]
        if alts and rng.random() < self.cfg.synonym_rate:
            return alts[rng.integers(len(alts))]
        return symptom.replace("_", " ")

    def sentence(self, templates, symptom: str, rng) -> str:
        t = templates[rng.integers(len(templates))]
        s = self.surface(symptom, rng)
        return t.format(s=s, S=s[:1].upper() + s[1:], n=int(rng.integers(1, 8)))

    def presentation(self, profile: DiseaseProfile, rng) -> str:
        noise = self.cfg.noise
        symptoms = list(profile.finding_probs)
        p = np.array([profile.finding_probs[s] for s in symptoms])
        present = [s for s, hit in zip(symptoms, rng.random(len(p)) < p) if hit]
        if noise:
            present = [s for s in present if rng.random() >= noise]
        if not present:
            present = [symptoms[int(rng.choice(len(p), p=p / p.sum()))]]
        negs = list(profile.negated_probs)
        q = np.array([profile.negated_probs[s] for s in negs])
        negated = [s for s, hit in zip(negs, rng.random(len(q)) < q) if hit and s not in present]
        sentences = [self.sentence(PRESENT_TEMPLATES, s, rng) for s in present]
        sentences += [self.sentence(ABSENT_TEMPLATES, s, rng) for s in negated]
        if noise:
            universe = self.world.universe.symptoms
            if rng.random() < noise:
                spurious = universe[int(rng.integers(len(universe)))]
                sentences.append(self.sentence(PRESENT_TEMPLATES, spurious, rng))
            if negated and rng.random() < noise:
                s = negated[int(rng.integers(len(negated)))]
                sentences.append(CONFLICT_TEMPLATE.format(s=self.surface(s, rng)))
        for _ in range(self.cfg.filler_sentences):
            sentences.append(FILLER[int(rng.integers(len(FILLER)))])
        order = rng.permutation(len(sentences))
        return " ".join(sentences[i] for i in order)

    def followup(self, rng) -> str:
        universe = self.world.universe.symptoms
        s = universe[int(rng.integers(len(universe)))]
        parts = [FOLLOWUP_FILLER[int(rng.integers(len(FOLLOWUP_FILLER)))],
                 self.sentence(PRESENT_TEMPLATES, s, rng)]
        return " ".join(parts)

    def filler(self, rng) -> str:
        return FILLER[int(rng.integers(len(FILLER)))]


def _pick_code(profile: DiseaseProfile, rng) -> str:
    codes = sorted(profile.phenotype.codes)
    return codes[int(rng.integers(len(codes)))]


def generate_cohort(world: World, cfg: GenConfig) -> list[GeneratedPatient]:
    """Timelines together with each patient's drawn disease and scenario."""
    if not world.profiles:
        raise ValueError("world has no diseases")
    n_dis = len(world.profiles)
    if cfg.scenario_mix.get("C", 0.0) > 0 and n_dis < 2:
        raise ValueError("scenario C needs at least two diseases")
    prev = np.array([p.prevalence_weight for p in world.profiles])
    prev = prev / prev.sum()
    mix = cfg.mix_vector()
    writer = _NoteWriter(world, cfg)
    tau = cfg.tau
    out = []
    for idx in range(cfg.n_patients):
        rng = np.random.default_rng(np.random.SeedSequence([world.seed, cfg.seed, idx]))
        di = int(rng.choice(n_dis, p=prev))
        scenario = SCENARIOS[int(rng.choice(len(SCENARIOS), p=mix))]
        profile = world.profiles[di]
        age = int(rng.integers(cfg.age_range[0], cfg.age_range[1] + 1))
        visits: list[tuple[int, VisitClass, frozenset[str], str]] = []
        t = int(rng.integers(4 * tau, 4 * tau + 365))
        if rng.random() < 0.3:
            visits.append((t - int(rng.integers(tau + 1, 3 * tau)), VisitClass.OTHER,
                           frozenset(), writer.filler(rng)))

        def episode(start: int) -> None:
            visits.append((start, VisitClass.OUTPATIENT,
                           frozenset({_pick_code(profile, rng)}),
                           writer.presentation(profile, rng)))

        episode(t)
        last = t
        if scenario == "B":
            last = t + tau + int(rng.integers(5, 200))
            episode(last)
        elif scenario == "C":
            qi = int(rng.choice(n_dis - 1, p=np.delete(prev, di) / np.delete(prev, di).sum()))
            qi += qi >= di
            other = world.profiles[qi]
            last = t + int(rng.integers(1, tau))
            visits.append((last, VisitClass.OUTPATIENT, frozenset({_pick_code(other, rng)}),
                           writer.presentation(other, rng)))
        elif scenario == "D":
            last = t + int(rng.integers(1, tau))
            visits.append((last, VisitClass.OUTPATIENT,
                           frozenset({_pick_code(profile, rng)}), writer.followup(rng)))
        if rng.random() < 0.3:
            visits.append((last + tau + int(rng.integers(1, 200)), VisitClass.OTHER,
                           frozenset(), writer.filler(rng)))
        pid = f"P{idx:06d}"
        encs = tuple(Encounter(f"{pid}-E{j}", time, vc, codes, note)
                     for j, (time, vc, codes, note) in enumerate(sorted(visits, key=lambda v: v[0])))
        out.append(GeneratedPatient(Timeline(pid, encs, age), profile.disease, scenario))
    return out


def generate_timelines(world: World, cfg: GenConfig) -> list[Timeline]:
    return [g.timeline for g in generate_cohort(world, cfg)]
