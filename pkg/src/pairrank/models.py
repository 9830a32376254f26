"""Model backends behind a single fit / predict-order interface.

Four families are supported: RBF-kernel support vector machines, gradient
boosted trees, single CART trees, and bagged random forests.  Each family
runs in one of two modes: CLASSIFIER (binary targets, probability-like
scores) for the difference-based ranking protocols, or REGRESSOR (real
targets, unbounded scores) for the traditional protocol and the
difference-regression ablation.

Trees and the SVM solver come from scikit-learn; the boosting loop and the
bagging layer are implemented here so that staged training losses, per-member
seeding, and leaf updates stay inspectable.
"""

from __future__ import annotations

import base64
import enum
import json
import pickle
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
from sklearn.svm import SVC, SVR
from sklearn.tree import DecisionTreeClassifier, DecisionTreeRegressor

from .protocol import Protocol

__all__ = [
    "ModelKind",
    "ModelMode",
    "Ordering",
    "TrainedPredictor",
    "ModelError",
    "fit",
    "predict_score",
    "predict_scores",
    "predict_order",
    "predict_order_many",
    "mode_for_protocol",
    "default_config",
    "svm_kkt_residual",
    "save_predictor",
    "load_predictor",
]

SVM_TOLERANCE = 1e-3
SVM_MAX_ITER = 100_000
SVR_EPSILON = 0.1


class ModelError(ValueError):
    """Raised for invalid configurations, degenerate data, or misuse."""


class ModelKind(str, enum.Enum):
    SVM = "svm"
    GBDT = "gbdt"
    DTREE = "dtree"
    RFOREST = "rforest"


class ModelMode(str, enum.Enum):
    CLASSIFIER = "classifier"
    REGRESSOR = "regressor"


class Ordering(enum.Enum):
    FIRST = "first"
    SECOND = "second"


def mode_for_protocol(protocol: Protocol) -> ModelMode:
    """The model mode each training regime requires."""
    if protocol in (Protocol.PROPOSED, Protocol.G2):
        return ModelMode.CLASSIFIER
    return ModelMode.REGRESSOR


# Split criteria by mode; GBDT base learners are regression trees on
# gradients in both modes, hence always use the regression criteria.
_CLASSIFIER_CRITERIA = {"gini": "gini", "info_gain": "entropy"}
_REGRESSOR_CRITERIA = {"mse": "squared_error", "mae": "absolute_error"}
_MAX_FEATURES = {"sqrt": "sqrt", "log2": "log2", None: None}

_TREE_KEYS = ("criterion", "max_depth", "min_samples_split", "min_samples_leaf", "max_features")
_CONFIG_KEYS = {
    ModelKind.DTREE: frozenset(_TREE_KEYS),
    ModelKind.RFOREST: frozenset(_TREE_KEYS + ("n_estimators",)),
    ModelKind.GBDT: frozenset(_TREE_KEYS + ("n_estimators", "learning_rate")),
    ModelKind.SVM: frozenset(("C", "gamma")),
}
_OPTIONAL_KEYS = {
    ModelKind.RFOREST: frozenset(("bootstrap",)),
    ModelKind.DTREE: frozenset(),
    ModelKind.GBDT: frozenset(),
    ModelKind.SVM: frozenset(),
}


def default_config(kind: ModelKind, mode: ModelMode) -> dict:
    """A sane mid-range configuration, mainly for demos and the CLI."""
    kind, mode = ModelKind(kind), ModelMode(mode)
    if kind is ModelKind.SVM:
        return {"C": 1.0, "gamma": 0.05}
    criterion = "gini" if mode is ModelMode.CLASSIFIER else "mse"
    if kind is ModelKind.GBDT:
        criterion = "mse"
    config = {
        "criterion": criterion,
        "max_depth": 20,
        "min_samples_split": 2,
        "min_samples_leaf": 1,
        "max_features": "sqrt",
    }
    if kind is ModelKind.RFOREST:
        config["n_estimators"] = 100
    elif kind is ModelKind.GBDT:
        config.update(n_estimators=100, learning_rate=0.1, max_depth=5)
    return config


def _validate_config(kind: ModelKind, mode: ModelMode, config: dict) -> dict:
    keys = set(config)
    required = _CONFIG_KEYS[kind]
    missing = required - keys
    extra = keys - required - _OPTIONAL_KEYS[kind]
    if missing or extra:
        raise ModelError(
            f"invalid config for {kind.value}: missing {sorted(missing)}, unexpected {sorted(extra)}"
        )
    cfg = dict(config)
    if kind is ModelKind.SVM:
        if not (cfg["C"] > 0 and cfg["gamma"] > 0):
            raise ModelError("SVM requires C > 0 and gamma > 0")
        return cfg
    criteria = _REGRESSOR_CRITERIA if (
        mode is ModelMode.REGRESSOR or kind is ModelKind.GBDT
    ) else _CLASSIFIER_CRITERIA
    if cfg["criterion"] not in criteria:
        raise ModelError(
            f"criterion {cfg['criterion']!r} not valid for {kind.value} in {mode.value} mode"
        )
    if cfg["max_features"] not in _MAX_FEATURES:
        raise ModelError(f"max_features must be 'sqrt', 'log2', or None, got {cfg['max_features']!r}")
    if cfg["max_depth"] is not None and cfg["max_depth"] < 1:
        raise ModelError("max_depth must be >= 1 or None")
    if cfg["min_samples_split"] < 2 or cfg["min_samples_leaf"] < 1:
        raise ModelError("min_samples_split >= 2 and min_samples_leaf >= 1 required")
    if "n_estimators" in required and cfg["n_estimators"] < 1:
        raise ModelError("n_estimators must be >= 1")
    if "learning_rate" in required and not cfg["learning_rate"] > 0:
        raise ModelError("learning_rate must be positive")
    return cfg


def _seed_streams(seed: int):
    """Independent generators for tree structure seeds and resampling."""
    structure, resample = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(structure), np.random.default_rng(resample)


def _next_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def _tree_params(cfg: dict, criterion_map: dict) -> dict:
    return {
        "criterion": criterion_map[cfg["criterion"]],
        "max_depth": cfg["max_depth"],
        "min_samples_split": int(cfg["min_samples_split"]),
        "min_samples_leaf": int(cfg["min_samples_leaf"]),
        "max_features": _MAX_FEATURES[cfg["max_features"]],
    }


class _TreeBackend:
    def __init__(self, mode, estimator):
        self.mode = mode
        self.estimator = estimator

    def predict_scores(self, X):
        if self.mode is ModelMode.CLASSIFIER:
            return self.estimator.predict_proba(X)[:, 1]
        return self.estimator.predict(X)


def _fit_tree(mode, cfg, X, y, seed):
    criteria = _CLASSIFIER_CRITERIA if mode is ModelMode.CLASSIFIER else _REGRESSOR_CRITERIA
    params = _tree_params(cfg, criteria)
    structure_rng, _ = _seed_streams(seed)
    cls = DecisionTreeClassifier if mode is ModelMode.CLASSIFIER else DecisionTreeRegressor
    est = cls(random_state=_next_seed(structure_rng), **params)
    est.fit(X, y)
    return _TreeBackend(mode, est)


class _ForestBackend:
    """Bagging of CART trees: bootstrap resamples, averaged member scores."""

    def __init__(self, mode, members):
        self.mode = mode
        self.members = members

    def predict_scores(self, X):
        acc = np.zeros(len(X))
        for est in self.members:
            if self.mode is ModelMode.CLASSIFIER:
                acc += est.predict_proba(X)[:, 1]
            else:
                acc += est.predict(X)
        return acc / len(self.members)


def _fit_forest(mode, cfg, X, y, seed):
    criteria = _CLASSIFIER_CRITERIA if mode is ModelMode.CLASSIFIER else _REGRESSOR_CRITERIA
    params = _tree_params(cfg, criteria)
    bootstrap = bool(cfg.get("bootstrap", True))
    structure_rng, resample_rng = _seed_streams(seed)
    cls = DecisionTreeClassifier if mode is ModelMode.CLASSIFIER else DecisionTreeRegressor
    n = len(X)
    members = []
    for _ in range(int(cfg["n_estimators"])):
        est = cls(random_state=_next_seed(structure_rng), **params)
        if bootstrap:
            idx = resample_rng.integers(0, n, size=n)
            est.fit(X[idx], y[idx])
        else:
            est.fit(X, y)
        members.append(est)
    return _ForestBackend(mode, members)


class _GbdtBackend:
    """Gradient boosting over CART regression trees.

    Each round fits a tree to the negative gradient of the loss (logistic
    loss in classifier mode, squared error in regressor mode) and then sets
    the leaf values analytically: a Newton step per leaf for logistic loss,
    the mean residual for squared error.  If a round would increase the
    training loss the step is halved until it no longer does, so the
    recorded ``train_losses`` sequence is non-increasing by construction.
    """

    def __init__(self, mode, f0, trees, leaf_values, train_losses):
        self.mode = mode
        self.f0 = f0
        self.trees = trees
        self.leaf_values = leaf_values
        self.train_losses = train_losses

    def raw_scores(self, X):
        raw = np.full(len(X), self.f0)
        for tree, values in zip(self.trees, self.leaf_values):
            raw += values[tree.apply(X)]
        return raw

    def staged_raw_scores(self, X):
        """Raw scores after the init stage and after each boosting round."""
        raw = np.full(len(X), self.f0)
        yield raw.copy()
        for tree, values in zip(self.trees, self.leaf_values):
            raw += values[tree.apply(X)]
            yield raw.copy()

    def predict_scores(self, X):
        raw = self.raw_scores(X)
        if self.mode is ModelMode.CLASSIFIER:
            return _sigmoid(raw)
        return raw


def _logistic_loss(y_sign, raw):
    return float(np.mean(np.logaddexp(0.0, -y_sign * raw)))


def _squared_loss(y, raw):
    return float(np.mean((y - raw) ** 2))


def _fit_gbdt(mode, cfg, X, y, seed):
    params = _tree_params(cfg, _REGRESSOR_CRITERIA)
    learning_rate = float(cfg["learning_rate"])
    structure_rng, _ = _seed_streams(seed)
    n = len(X)

    if mode is ModelMode.CLASSIFIER:
        y_sign = 2.0 * y - 1.0
        p_mean = float(np.mean(y))
        f0 = float(np.log(p_mean / (1.0 - p_mean)))
        loss_of = lambda raw: _logistic_loss(y_sign, raw)
    else:
        f0 = float(np.mean(y))
        loss_of = lambda raw: _squared_loss(y, raw)

    raw = np.full(n, f0)
    trees, leaf_values, losses = [], [], [loss_of(raw)]
    for _ in range(int(cfg["n_estimators"])):
        if mode is ModelMode.CLASSIFIER:
            prob = _sigmoid(raw)
            grad = y - prob
            hess = prob * (1.0 - prob)
        else:
            grad = y - raw
            hess = np.ones(n)
        tree = DecisionTreeRegressor(random_state=_next_seed(structure_rng), **params)
        tree.fit(X, grad)
        leaves = tree.apply(X)
        values = np.zeros(tree.tree_.node_count)
        grad_sums = np.bincount(leaves, weights=grad, minlength=len(values))
        hess_sums = np.bincount(leaves, weights=hess, minlength=len(values))
        with np.errstate(invalid="ignore"):
            values = np.where(hess_sums > 1e-12, grad_sums / np.maximum(hess_sums, 1e-12), 0.0)

        scale = learning_rate
        step = values[leaves]
        new_loss = loss_of(raw + scale * step)
        for _ in range(40):  # backtrack on overshoot; 0 contribution in the limit
            if new_loss <= losses[-1]:
                break
            scale *= 0.5
            new_loss = loss_of(raw + scale * step)
        if new_loss > losses[-1]:
            scale, new_loss = 0.0, losses[-1]

        raw = raw + scale * step
        trees.append(tree)
        leaf_values.append(values * scale)
        losses.append(new_loss)
    return _GbdtBackend(mode, f0, trees, leaf_values, losses)


class _SvmBackend:
    def __init__(self, mode, estimator):
        self.mode = mode
        self.estimator = estimator

    def predict_scores(self, X):
        if self.mode is ModelMode.CLASSIFIER:
            return _sigmoid(self.estimator.decision_function(X))
        return self.estimator.predict(X)


def _fit_svm(mode, cfg, X, y, seed):
    common = dict(
        kernel="rbf",
        C=float(cfg["C"]),
        gamma=float(cfg["gamma"]),
        tol=SVM_TOLERANCE,
        max_iter=SVM_MAX_ITER,
        cache_size=256,
    )
    if mode is ModelMode.CLASSIFIER:
        est = SVC(**common)
    else:
        est = SVR(epsilon=SVR_EPSILON, **common)
    import warnings

    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*max_iter.*")  # capped on purpose
        est.fit(X, y)
    return _SvmBackend(mode, est)


_FITTERS = {
    ModelKind.DTREE: _fit_tree,
    ModelKind.RFOREST: _fit_forest,
    ModelKind.GBDT: _fit_gbdt,
    ModelKind.SVM: _fit_svm,
}


@dataclass(frozen=True)
class TrainedPredictor:
    """An immutable fitted model; create via :func:`fit`."""

    kind: ModelKind
    mode: ModelMode
    config: MappingProxyType
    feature_len: int
    backend: object = field(repr=False)

    def predict_scores(self, X) -> np.ndarray:
        """Scores for a batch of feature vectors (rows).

        Classifier scores lie in [0, 1] (class-1 probability-like);
        regressor scores are unbounded reals.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.feature_len:
            raise ModelError(
                f"expected vectors of length {self.feature_len}, got shape {X.shape}"
            )
        return self.backend.predict_scores(X)

    def predict_score(self, x) -> float:
        return float(self.predict_scores(np.asarray(x, dtype=np.float64)[None, :])[0])


def fit(kind, mode, config, inputs, targets, seed: int = 0) -> TrainedPredictor:
    """Train one model.

    ``inputs`` is an (n, d) array-like, ``targets`` the matching n targets:
    binary {0, 1} with both classes present in CLASSIFIER mode, reals in
    REGRESSOR mode.  The result is deterministic for a given seed.
    """
    kind, mode = ModelKind(kind), ModelMode(mode)
    cfg = _validate_config(kind, mode, dict(config))
    X = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ModelError("inputs must be 2-d with one target per row")
    if len(X) < 2:
        raise ModelError(f"need at least 2 training rows, got {len(X)}")
    if mode is ModelMode.CLASSIFIER:
        classes = np.unique(y)
        if not np.all(np.isin(classes, (0.0, 1.0))):
            raise ModelError("classifier targets must be binary 0/1")
        if len(classes) < 2:
            raise ModelError("classifier training data contains a single class")
    backend = _FITTERS[kind](mode, cfg, X, y, int(seed))
    return TrainedPredictor(
        kind=kind,
        mode=mode,
        config=MappingProxyType(cfg),
        feature_len=X.shape[1],
        backend=backend,
    )


def predict_scores(predictor: TrainedPredictor, X) -> np.ndarray:
    return predictor.predict_scores(X)


def predict_score(predictor: TrainedPredictor, x) -> float:
    return predictor.predict_score(x)


def _require_mode(predictor, protocol: Protocol) -> None:
    expected = mode_for_protocol(protocol)
    if predictor.mode is not expected:
        raise ModelError(
            f"protocol {protocol.value} needs a {expected.value} model, "
            f"got a {predictor.mode.value}"
        )


def predict_order_many(predictor, protocol: Protocol, A, B) -> np.ndarray:
    """Vectorised ordering: True where the first vector of a pair wins.

    PROPOSED/G2 classify the difference vector and answer FIRST when the
    class-1 score is >= 0.5; G1 answers FIRST when the predicted difference
    is >= 0; BASELINE scores both raw vectors and answers FIRST when the
    first score is >= the second.  Ties always favour FIRST.
    """
    protocol = Protocol(protocol)
    _require_mode(predictor, protocol)
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ModelError("paired vector batches must have identical shapes")
    if protocol is Protocol.BASELINE:
        return predictor.predict_scores(A) >= predictor.predict_scores(B)
    diffs = A - B
    scores = predictor.predict_scores(diffs)
    threshold = 0.5 if protocol in (Protocol.PROPOSED, Protocol.G2) else 0.0
    return scores >= threshold


def predict_order(predictor, protocol: Protocol, v_a, v_b) -> Ordering:
    """Which of two feature vectors the predictor ranks better."""
    a = np.asarray(v_a, dtype=np.float64)[None, :]
    b = np.asarray(v_b, dtype=np.float64)[None, :]
    first = predict_order_many(predictor, protocol, a, b)[0]
    return Ordering.FIRST if first else Ordering.SECOND


def svm_kkt_residual(predictor: TrainedPredictor, inputs, targets) -> float:
    """Largest KKT violation of a fitted SVM on its training set.

    Checks dual feasibility (0 <= alpha <= C) for both modes and, for
    classifiers, complementary slackness: zero-alpha points need margin
    >= 1, bounded ones margin <= 1, free ones margin == 1 (all up to the
    returned residual).
    """
    if predictor.kind is not ModelKind.SVM:
        raise ModelError("KKT residual is defined for SVM predictors only")
    est = predictor.backend.estimator
    X = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    C = float(est.C)
    alpha = np.zeros(len(X))
    alpha[est.support_] = np.abs(est.dual_coef_[0])
    residual = max(0.0, float(np.max(alpha)) - C, -float(np.min(alpha)))
    if predictor.mode is ModelMode.REGRESSOR:
        return residual
    y_sign = 2.0 * y - 1.0
    margins = y_sign * est.decision_function(X)
    at_upper = alpha >= C * (1.0 - 1e-9)
    at_lower = alpha <= C * 1e-12
    free = ~(at_upper | at_lower)
    if np.any(at_lower):
        residual = max(residual, float(np.max(1.0 - margins[at_lower], initial=0.0)))
    if np.any(at_upper):
        residual = max(residual, float(np.max(margins[at_upper] - 1.0, initial=0.0)))
    if np.any(free):
        residual = max(residual, float(np.max(np.abs(margins[free] - 1.0))))
    return residual


PREDICTOR_FORMAT = "pairrank-predictor"
PREDICTOR_FORMAT_VERSION = 1


def save_predictor(predictor: TrainedPredictor, path) -> None:
    """Serialise a predictor to a self-describing JSON text file.

    The header carries kind, mode, config, and feature length in the clear;
    the fitted state is an embedded base64 pickle payload that reloads to
    bit-identical predictions.
    """
    doc = {
        "format": PREDICTOR_FORMAT,
        "version": PREDICTOR_FORMAT_VERSION,
        "kind": predictor.kind.value,
        "mode": predictor.mode.value,
        "feature_len": predictor.feature_len,
        "config": dict(predictor.config),
        "payload": base64.b64encode(pickle.dumps(predictor.backend)).decode("ascii"),
    }
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_predictor(path) -> TrainedPredictor:
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    if doc.get("format") != PREDICTOR_FORMAT:
        raise ModelError(f"{path}: not a serialized predictor")
    backend = pickle.loads(base64.b64decode(doc["payload"]))
    return TrainedPredictor(
        kind=ModelKind(doc["kind"]),
        mode=ModelMode(doc["mode"]),
        config=MappingProxyType(dict(doc["config"])),
        feature_len=int(doc["feature_len"]),
        backend=backend,
    )
