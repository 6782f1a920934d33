TrainingStepEventName = "MoreTrainingStep"
ModelEpochEventName = "MoreModelEpoch"
EvaluationEventName = "MoreEvaluation"
RunErrorEventName = "MoreRunError"

DatasetMagic = "MOREDS1"
CheckpointMagic = "MORECKPT1"

LoggerName = "more_offline_rl"

STD_FLOOR = 1e-6
REWARD_FLOOR = 1e-6
LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
