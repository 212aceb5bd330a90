"""marginlab: decision-boundary margin measurement, robustness metrics,
margin-guided retraining, and evasion-attack evaluation for dense classifiers."""

from .attacks import (AttackConfig, bim, evaluate, fgsm, mim, noise, pgd,
                      read_accuracy_csv, sweep, write_accuracy_csv)
from .boundary import (DirectionSet, MarginRecord, SearchConfig,
                       make_directions, read_margins, search_all, search_one,
                       write_margins)
from .data import (LabeledDataset, SyntheticSpec, load_idx, make_synthetic,
                   split, subsample, write_idx)
from .feedback import (FeedbackBundle, GeneratedExample, GenerationPlan,
                       RetrainConfig, assemble_retrain_set, feedback_retrain,
                       generate_examples, plan_from_report, read_examples,
                       read_plan, write_examples, write_plan)
from .metrics import (MeanMarginMatrix, RobustnessReport, adjacency_proportions,
                      build_matrix, build_report, cci_cross_margins,
                      class_robustness, find_cci, model_robustness,
                      per_class_mean_margins, read_report, tier_assign,
                      write_matrix_csv, write_report)
from .network import (DenseClassifier, Gradients, Layer, Network, TrainConfig,
                      accuracy, backward, backward_batch, forward,
                      forward_batch, init_network, load_model, logit_gradient,
                      loss_value, predict, predict_batch, save_model, sgd_step,
                      train)
from .theory import (LemmaResult, TheoremResult, TheoryProbe,
                     find_boundary_distance, lemma1_check, make_probe,
                     run_lemma_trials, run_theorem_trials, theorem1_check,
                     write_theory_report)

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "bim", "evaluate", "fgsm", "mim", "noise", "pgd",
    "read_accuracy_csv", "sweep", "write_accuracy_csv",
    "DirectionSet", "MarginRecord", "SearchConfig", "make_directions",
    "read_margins", "search_all", "search_one", "write_margins",
    "LabeledDataset", "SyntheticSpec", "load_idx", "make_synthetic", "split",
    "subsample", "write_idx",
    "FeedbackBundle", "GeneratedExample", "GenerationPlan", "RetrainConfig",
    "assemble_retrain_set", "feedback_retrain", "generate_examples",
    "plan_from_report", "read_examples", "read_plan", "write_examples",
    "write_plan",
    "MeanMarginMatrix", "RobustnessReport", "adjacency_proportions",
    "build_matrix", "build_report", "cci_cross_margins", "class_robustness",
    "find_cci", "model_robustness", "per_class_mean_margins", "read_report",
    "tier_assign", "write_matrix_csv", "write_report",
    "DenseClassifier", "Gradients", "Layer", "Network", "TrainConfig",
    "accuracy", "backward", "backward_batch", "forward", "forward_batch",
    "init_network", "load_model", "logit_gradient", "loss_value", "predict",
    "predict_batch", "save_model", "sgd_step", "train",
    "LemmaResult", "TheoremResult", "TheoryProbe", "find_boundary_distance",
    "lemma1_check", "make_probe", "run_lemma_trials", "run_theorem_trials",
    "theorem1_check", "write_theory_report",
    "__version__",
]
