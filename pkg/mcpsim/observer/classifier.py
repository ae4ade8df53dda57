"""
Traffic classification with and without the LoLa treatment bit.

Flows are reduced to three features (mean payload length, mean inter-arrival,
share of LoLa-marked packets) and classified with Gaussian naive Bayes.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger
from sklearn.metrics import accuracy_score
from sklearn.model_selection import train_test_split
from sklearn.naive_bayes import GaussianNB

from mcpsim.errors import InsufficientData

BASE_FEATURES = ["mean_payload_len", "mean_interarrival"]
LOLA_FEATURE = "lola_rate"
MIN_TRAINING_FLOWS = 10


@dataclass(frozen=True)
class AppClassProfile:
    """Per-class generator parameters"""

    payload_mean: float
    payload_std: float
    interarrival_mean: float
    lola_alpha: float
    lola_beta: float


OVERLAPPING_PROFILES = {
    "interactive": AppClassProfile(420.0, 180.0, 0.060, 8.0, 2.0),
    "bulk": AppClassProfile(520.0, 180.0, 0.075, 2.0, 8.0),
}
SEPARABLE_PROFILES = {
    "interactive": AppClassProfile(150.0, 20.0, 0.020, 8.0, 2.0),
    "bulk": AppClassProfile(1150.0, 20.0, 0.200, 2.0, 8.0),
}


def generate_flow_packets(
    n_flows: int = 200,
    seed: int = 7,
    profiles: Optional[dict[str, AppClassProfile]] = None,
    packets_per_flow: int = 20,
    constant_lola: Optional[float] = None,
) -> pd.DataFrame:
    """Synthetic per-packet table (flow, label, time, payload_len, lola).

    Flows alternate between the classes. Each flow draws its own LoLa marking
    probability from the class Beta distribution, or uses `constant_lola`.
    """
    profiles = profiles or OVERLAPPING_PROFILES
    names = sorted(profiles)
    rng = np.random.default_rng(seed)
    frames = []
    for flow in range(n_flows):
        label = names[flow % len(names)]
        p = profiles[label]
        sizes = np.clip(rng.normal(p.payload_mean, p.payload_std, packets_per_flow), 1, 1400)
        gaps = rng.exponential(p.interarrival_mean, packets_per_flow)
        rate = (
            constant_lola
            if constant_lola is not None
            else rng.beta(p.lola_alpha, p.lola_beta)
        )
        frames.append(
            pd.DataFrame(
                {
                    "flow": flow,
                    "label": label,
                    "time": np.cumsum(gaps),
                    "payload_len": sizes.round().astype(int),
                    "lola": rng.random(packets_per_flow) < rate,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def flow_features(packets: pd.DataFrame, flow_column: str = "flow") -> pd.DataFrame:
    """Aggregate a per-packet table into one feature row per flow.

    Works on generator output and on `records_to_frame` output alike; a
    `label` column is carried through when present.
    """
    missing = {flow_column, "time", "payload_len", "lola"} - set(packets.columns)
    if missing:
        raise ValueError(f"Missing packet columns: {sorted(missing)}")

    ordered = packets.sort_values([flow_column, "time"])
    grouped = ordered.groupby(flow_column, sort=True)
    features = pd.DataFrame(
        {
            "mean_payload_len": grouped["payload_len"].mean(),
            "mean_interarrival": grouped["time"].apply(
                lambda t: float(np.diff(t.to_numpy()).mean()) if len(t) > 1 else 0.0
            ),
            LOLA_FEATURE: grouped["lola"].mean().astype(float),
        }
    )
    if "label" in ordered.columns:
        features["label"] = grouped["label"].first()
    return features


class LolaClassifier:
    """Gaussian naive Bayes over flow features"""

    def __init__(self, use_lola: bool):
        self.use_lola = use_lola
        self.features = BASE_FEATURES + ([LOLA_FEATURE] if use_lola else [])
        self.model = GaussianNB()
        self.is_fitted = False

    def _validate_features(self, df: pd.DataFrame) -> None:
        missing = set(self.features) - set(df.columns)
        if missing:
            raise ValueError(f"Missing flow features: {sorted(missing)}")

    def fit(self, df: pd.DataFrame, labels: pd.Series) -> "LolaClassifier":
        self._validate_features(df)
        counts = labels.value_counts()
        if len(counts) < 2 or counts.min() < MIN_TRAINING_FLOWS:
            raise InsufficientData(
                f"Need >= {MIN_TRAINING_FLOWS} training flows per class, got {counts.to_dict()}"
            )
        self.model.fit(df[self.features].to_numpy(), labels.to_numpy())
        self.is_fitted = True
        return self

    def predict(self, df: pd.DataFrame) -> np.ndarray:
        if not self.is_fitted:
            raise RuntimeError("Classifier must be fitted before predict")
        self._validate_features(df)
        return self.model.predict(df[self.features].to_numpy())


@dataclass
class LolaClassification:
    predictions: pd.Series
    accuracy: float
    use_lola: bool


def classify_lola(
    features: pd.DataFrame, use_lola: bool, seed: int = 0, label_column: str = "label"
) -> LolaClassification:
    """Fit on half the flows (stratified) and score on the other half"""
    if label_column not in features.columns:
        raise ValueError(f"Ground-truth column {label_column!r} missing")
    labels = features[label_column]
    if labels.value_counts().min() < 2:
        raise InsufficientData("Each class needs flows on both sides of the split")

    train, test = train_test_split(
        features, test_size=0.5, random_state=seed, stratify=labels
    )
    classifier = LolaClassifier(use_lola).fit(train, train[label_column])
    predicted = pd.Series(classifier.predict(test), index=test.index, name="predicted")
    accuracy = float(accuracy_score(test[label_column], predicted))
    logger.debug(
        "LoLa classifier scored", use_lola=use_lola, flows=len(features), accuracy=accuracy
    )
    return LolaClassification(predicted, accuracy, use_lola)
