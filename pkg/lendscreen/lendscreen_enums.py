from strenum import StrEnum


class Artifacts(StrEnum):
    TRAIN_SPLIT = 'train.jsonl'
    TEST_SPLIT = 'test.jsonl'
    GENERATOR_CONFIG = 'generator.json'
    MANIFEST = 'manifest.json'
    CHECKPOINT = 'checkpoint.json'
    METRICS = 'metrics.csv'
    LOSS_CURVES = 'loss_curves.csv'
    LENGTH_BINS = 'length_bins.csv'
    EMBEDDINGS = 'embeddings.csv'
    PCA = 'pca.csv'
    PCA_PLOT = 'pca.svg'
    ALIGN_UNIFORM_PLOT = 'align_uniform.svg'
    LENGTH_BINS_PLOT = 'length_bins.svg'
    LABEL_RATIO_PLOT = 'label_ratio.svg'


class OpKind(StrEnum):
    ADD = 'add'
    MUL = 'mul'
    DIV = 'div'
    NEG = 'neg'
    MATMUL = 'matmul'
    TRANSPOSE = 'transpose'
    RESHAPE = 'reshape'
    INDEX = 'index'
    SUM = 'sum'
    EXP = 'exp'
    LOG = 'log'
    SQRT = 'sqrt'
    TANH = 'tanh'
    SIGMOID = 'sigmoid'
    RELU = 'relu'
    SOFTMAX = 'softmax'
    LOG_SOFTMAX = 'log_softmax'
    LAYER_NORM = 'layer_norm'
    DROPOUT = 'dropout'
    EMBEDDING = 'embedding'
    GRAD_REVERSE = 'grad_reverse'
    MASKED_FILL = 'masked_fill'
    CONCAT = 'concat'
    STACK = 'stack'
    TAKE = 'take'


class Mode(StrEnum):
    TRAIN = 'train'
    EVAL = 'eval'


class BackboneKind(StrEnum):
    TRANSFORMER = 'transformer'
    RNN = 'rnn'
    LSTM = 'lstm'
    GRU = 'gru'


class Variant(StrEnum):
    """Ablation variants, named after the rows of the comparison table."""
    OURS = 'ours'
    NO_CL = 'no-CL'
    NO_DA = 'no-DA'
    NEITHER = 'neither'

    @property
    def use_cl(self) -> bool:
        return self in (Variant.OURS, Variant.NO_DA)

    @property
    def use_da(self) -> bool:
        return self in (Variant.OURS, Variant.NO_CL)


class Command(StrEnum):
    GENERATE = 'generate'
    TRAIN = 'train'
    EVALUATE = 'evaluate'
    ABLATE = 'ablate'
    BACKBONES = 'backbones'
    TRANSDUCTIVE = 'transductive'
    SWEEP = 'sweep'
    EMBED = 'embed'
