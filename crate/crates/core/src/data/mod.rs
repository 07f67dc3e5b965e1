//! Event logs, state partitioning, sample assembly and the synthetic world.

mod bayes;
mod dataset;
mod events;
mod features;
mod partition;
mod sample;
mod synth;

pub use bayes::bayes_auc_oracle;
pub use dataset::{read_samples, write_samples, Dataset, DatasetMeta, SplitSamples};
pub use events::{
    read_events, write_events, AttributeChangeEvent, ExposureEvent, InteractionEvent, ItemProfile,
    Timestamp, UserProfile, SECONDS_PER_DAY, SECONDS_PER_HOUR,
};
pub use features::{
    AttributeFeatures, PriceBucketizer, CATEGORY_RANK_BUCKETS, DISCOUNT_BUCKETS,
    PRICE_LEVEL_BUCKETS,
};
pub use partition::{partition_states, AttributeState, Horizon, Partition};
pub use sample::{
    build_sample, AttributeStateInput, ItemBehaviorInput, SampleBuilder, TrainingSample,
    TruncationConfig, UserBehaviorInput,
};
pub use synth::{
    mean_states_per_item, price_at, GroundTruth, SyntheticWorld, SyntheticWorldConfig,
};
