from spinsplat.training.trainer import TrainConfig, TrainedModel, Trainer, TrainMode, evaluate, train

__all__ = ['TrainConfig', 'TrainedModel', 'Trainer', 'TrainMode', 'evaluate', 'train']
