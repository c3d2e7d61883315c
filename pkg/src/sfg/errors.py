class SFGError(Exception):
    exit_code = 1


class ConfigError(SFGError):
    exit_code = 2


class DataError(SFGError):
    exit_code = 3


class DivergenceError(SFGError):
    exit_code = 4
