from .stage import RUN_SUBDIRS, RunContext, Stage

__all__ = ["RUN_SUBDIRS", "RunContext", "Stage"]
