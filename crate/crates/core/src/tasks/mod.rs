//! Dataset ingestion and sequential-task construction.

mod color;
mod dataset;
mod idx;
mod split;
mod transforms;

pub use color::{color_space_task, invert3, rgb_to_hed, rgb_to_hsv, ColorSpace, RGB_FROM_HED, YIQ_FROM_RGB, YUV_FROM_RGB};
pub use dataset::{load_csv, LabeledDataset};
pub use idx::{encode_idx, load_idx, parse_images, parse_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use split::{
    class_split_tasks, partition_classes, restrict_to_classes, split_train_val, Regime, Splits, Task,
    TaskStream,
};
pub use transforms::{
    apply_permutation, invert_permutation, nonlinear_transform_task, permutation, permute_task,
    FittedNonlinear, NonlinearTransform, TransformSpec,
};
