//! Second-stage crop classifier: frozen deep-feature extraction feeding a
//! calibrated kernel SVM.

mod features;
mod svm;

pub use features::{
    create_feature_extractor, ExtractorConfig, FeatureCache, FeatureExtractor, FeatureVector,
    EXTRACTOR_BACKENDS, FEATURE_DIM,
};
pub use svm::{
    classify, decision_margins, train_svm, Calibration, GammaName, GammaPolicy, Kernel, SvmConfig,
    SvmModel, TrainOn,
};
