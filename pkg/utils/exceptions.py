class DeepBoostError(Exception):
    """Base exception for all deepboost errors"""
    pass

class ConfigError(DeepBoostError):
    """Error in configuration or settings"""
    pass

class DatasetError(DeepBoostError):
    """Error while reading or validating a dataset"""
    pass

class DatasetFormatError(DatasetError):
    """Dataset file does not follow its binary format"""
    pass

class EmptyClassError(DatasetError):
    """A class directory holds no decodable images"""
    pass

class ImageDimensionError(DeepBoostError):
    """Image or kernel sizes are incompatible"""
    pass

class FilterError(DeepBoostError):
    """Error in filter bank construction"""
    pass

class FilterCompositionError(FilterError):
    """Filters cannot be composed"""
    pass

class FeatureError(DeepBoostError):
    """Error during activation or histogram extraction"""
    pass

class BoostingError(DeepBoostError):
    """Error while fitting weak or strong classifiers"""
    pass

class WeightDivergenceError(BoostingError):
    """All sample weights underflowed to zero"""
    pass

class DimensionMismatchError(BoostingError):
    """Feature vector does not match the classifier dimension"""
    pass

class DictionaryLearningError(DeepBoostError):
    """Error while updating an analysis dictionary"""
    pass

class TrainingError(DeepBoostError):
    """Error while training a deep boosting model"""
    pass

class ClassTrainingError(TrainingError):
    """Training failed for one class of a one-vs-all model"""

    def __init__(self, class_name: str, message: str):
        super().__init__(f"Training failed for class '{class_name}': {message}")
        self.class_name = class_name

class ModelFormatError(DeepBoostError):
    """Model file cannot be read"""
    pass

class BadMagicError(ModelFormatError):
    """Model file does not start with the expected magic header"""
    pass

class VersionMismatchError(ModelFormatError):
    """Model file was written by an unsupported format version"""
    pass

class TruncatedModelError(ModelFormatError):
    """Model file ends before a section is complete"""
    pass

class ChecksumError(ModelFormatError):
    """A model file section failed its checksum"""
    pass

class EvaluationError(DeepBoostError):
    """Error while computing evaluation metrics"""
    pass

class ProcessError(DeepBoostError):
    """Error in process management"""
    pass
