from . import benchmark, evaluate, generate, plot, solve, train, validate

__all__ = ['benchmark', 'evaluate', 'generate', 'plot', 'solve', 'train', 'validate']
