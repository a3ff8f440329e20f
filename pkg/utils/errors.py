"""
Lớp ngoại lệ gốc cho toàn bộ pipeline.

Mỗi module khai báo ngoại lệ riêng ngay cạnh code raise nó; lớp gốc ở đây chỉ
giữ mã lỗi ổn định và exit code để `pipeline.py` in ra một dòng lỗi duy nhất.
"""

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_MODEL = 5
EXIT_TRADING = 6
EXIT_ARTIFACT = 7


class PipelineError(RuntimeError):
    """Ngoại lệ chung cho pipeline tín hiệu VIX futures."""

    code = "pipeline_error"
    exit_code = EXIT_UNEXPECTED


class DataError(PipelineError):
    """Lỗi dữ liệu đầu vào hoặc đường cong."""

    code = "data_error"
    exit_code = EXIT_DATA


class ModelError(PipelineError):
    """Lỗi ước lượng mô hình, utility hoặc mạng neural."""

    code = "model_error"
    exit_code = EXIT_MODEL


class TradingError(PipelineError):
    """Lỗi khi tính danh mục hoặc backtest."""

    code = "trading_error"
    exit_code = EXIT_TRADING


class DimensionMismatchError(ModelError):
    """Kích thước vector/ma trận không khớp."""

    code = "dimension_mismatch"
