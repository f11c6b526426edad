"""Adversarial return forecasting with entropy risk filtering.

Train a conditional adversarial model on windowed asset returns, sample
it into per-asset prediction ensembles, convert ensemble disagreement
into a risk measure, and backtest a risk-filtered market-neutral book.
"""

__version__ = "0.1.0"

from .backtest import (
    BacktestConfig,
    BacktestReport,
    MetricSet,
    aggregate_yearly,
    information_ratio,
    max_drawdown,
    run_backtest,
    run_thr_grid,
    sharpe,
)
from .data import (
    Category,
    FeatureVector,
    PriceSeries,
    SynthConfig,
    TrainingPair,
    build_dataset,
    build_features,
    build_label,
    discretize,
    load_prices,
    synth_market,
)
from .gan import (
    LossTrace,
    TrainConfig,
    build_discriminator,
    build_generator,
    discriminator_loss,
    generator_loss,
    sample_noise,
    train,
)
from .nn import (
    AdamState,
    DenseLayer,
    Network,
    adam_step,
    backward,
    forward,
    gradient_check,
    xavier_init,
)
from .portfolio import PortfolioWeights, SelectionParams, turnover, weight_portfolio
from .predict import (
    AssetPrediction,
    PredictionEnsemble,
    aggregate,
    ensemble_predict,
    predict_universe,
    risk_measure,
)
