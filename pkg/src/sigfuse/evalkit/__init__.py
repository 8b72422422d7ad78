from .corpus import Corpus, Sample, SynthConfig, synth_corpus
from .protocol import (
    CMCCurve,
    ExperimentConfig,
    SplitPlan,
    cmc,
    identify,
    run_experiment,
    split,
    true_ranks,
    write_cmc_csv,
)

__all__ = [
    "CMCCurve",
    "Corpus",
    "ExperimentConfig",
    "Sample",
    "SplitPlan",
    "SynthConfig",
    "cmc",
    "identify",
    "run_experiment",
    "split",
    "synth_corpus",
    "true_ranks",
    "write_cmc_csv",
]
