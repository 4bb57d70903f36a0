from phisolver.config import ComparisonTable, CompareRequest, RunConfig, RunRecord

__all__ = ["RunConfig", "RunRecord", "CompareRequest", "ComparisonTable"]
