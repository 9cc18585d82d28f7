import unittest

from .cli_test import CliTestCase
from .data_test import (BatchTestCase, GeneratorTestCase, PersistenceTestCase,
                        RevealTestCase)
from .experiments_test import DirectionalTestCase, JobTestCase, TinyRunTestCase
from .metrics_test import (AucTestCase, LengthBinTestCase, ProfitTestCase,
                           RepresentationTestCase)
from .model_test import (BlockGradientTestCase, CheckpointTestCase,
                         EncoderTestCase, ForwardTestCase, FuseTestCase,
                         ParameterTestCase)
from .objectives_test import (ContrastiveLossTestCase,
                              LabelAndDomainLossTestCase, ScheduleTestCase)
from .optim_test import AdamTestCase
from .parsing_test import (ConfigParsersTestCase, RecordParsersTestCase,
                           TypeParsingTestCase)
from .tensor_test import GradientCheckTestCase, TensorOpsTestCase
from .training_test import (EvaluationTestCase, LossDecreaseTestCase,
                            TrainerTestCase)

TEST_CASES = (
    TensorOpsTestCase, GradientCheckTestCase, AdamTestCase,
    TypeParsingTestCase, RecordParsersTestCase, ConfigParsersTestCase,
    GeneratorTestCase, BatchTestCase, RevealTestCase, PersistenceTestCase,
    ParameterTestCase, EncoderTestCase, FuseTestCase, ForwardTestCase,
    BlockGradientTestCase, CheckpointTestCase, LabelAndDomainLossTestCase,
    ContrastiveLossTestCase, ScheduleTestCase, AucTestCase, ProfitTestCase,
    RepresentationTestCase, LengthBinTestCase, TrainerTestCase,
    LossDecreaseTestCase, EvaluationTestCase, JobTestCase, TinyRunTestCase,
    DirectionalTestCase, CliTestCase,
)


def all_tests():
    suite = unittest.TestSuite()
    for case in TEST_CASES:
        suite.addTest(unittest.defaultTestLoader.loadTestsFromTestCase(case))
    return suite
