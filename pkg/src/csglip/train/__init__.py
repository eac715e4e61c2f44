from .adam import AdamState, NonFiniteGradient, adam_step
from .losses import (ChannelStats, adversarial_losses, bce, ccc_loss, ccc_per_channel,
                     channel_stats, mse_loss)
from .schedules import (BASELINE_KINDS, ScheduleSpec, TrainingDiverged, TrainLog, adapt_all_emotions,
                        adapt_emotion, discriminator_step, generator_step, normalized_windows,
                        regression_loss, train_baseline, train_csg, pretrain_csg, finish_csg)
