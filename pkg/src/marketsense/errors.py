"""Exception hierarchy shared across the package."""


class MarketSenseError(Exception):
    """Base class for every error raised by this package."""


class PreconditionError(MarketSenseError, ValueError):
    """An operation was called with inputs that violate its contract."""


# gateway
class GatewayError(MarketSenseError):
    pass


class NetworkError(GatewayError):
    pass


class CassetteMiss(GatewayError):
    pass


class ProviderRefusal(GatewayError):
    pass


# ingestion
class IngestionError(MarketSenseError):
    pass


class UnreadableFile(IngestionError):
    pass


class UnparsableFormat(IngestionError):
    pass


class MissingDate(IngestionError):
    pass


class UnparseableVerdict(IngestionError):
    pass


class EmptyCleanOutput(IngestionError):
    pass


class RegistryIOError(IngestionError):
    pass


class DuplicateConflict(IngestionError):
    pass


# corpus index
class CorpusIndexError(MarketSenseError):
    pass


class DimensionMismatch(CorpusIndexError):
    pass


class PersistenceError(CorpusIndexError):
    pass


class FormatVersionMismatch(PersistenceError):
    pass


# retrieval
class RetrievalError(MarketSenseError):
    pass


class EmptyHypothetical(RetrievalError):
    pass


class VariantParseError(RetrievalError):
    pass


class EmptyCorpus(RetrievalError):
    pass


class MissingSections(RetrievalError):
    pass


# agents
class AgentError(MarketSenseError):
    pass


class NonFiniteInput(AgentError, ValueError):
    pass


class InsufficientQuarters(AgentError):
    pass


class InsufficientHistory(AgentError):
    pass


class UnparseableSignal(AgentError):
    pass


# analytics / backtest
class AnalyticsError(MarketSenseError):
    pass


class TooShort(AnalyticsError):
    pass


class ZeroVolatility(AnalyticsError):
    pass


class NoDownside(AnalyticsError):
    pass


class BacktestError(MarketSenseError):
    pass


class MissingMarketCap(BacktestError):
    pass


class MissingPrice(BacktestError):
    pass


class NegativeCash(BacktestError):
    pass


class CoverageGap(BacktestError):
    pass


# factor lab
class FactorError(MarketSenseError):
    pass


class InsufficientOverlap(FactorError):
    pass


class RankDeficient(FactorError):
    pass


class TooFewRows(FactorError):
    pass


class MissingFactor(FactorError):
    pass


# evaluation
class EvaluationError(MarketSenseError):
    pass


class UnparseableJudgment(EvaluationError):
    pass


class NoClaims(EvaluationError):
    pass


class LengthMismatch(EvaluationError, ValueError):
    pass


class OutOfRange(EvaluationError, ValueError):
    pass


# audit
class LookaheadViolation(MarketSenseError):
    pass
