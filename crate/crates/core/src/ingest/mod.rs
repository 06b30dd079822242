//! Image I/O, on-disk videos and real-data preprocessing.

pub mod hsv;
pub mod pnm;
pub mod preprocess;
pub mod video_dir;

pub use hsv::{rgb8_to_hsv, rgb_to_hsv, HsvMask};
pub use pnm::{load_gray, load_image, load_rgb, save_gray, save_rgb, Image, RgbImage};
pub use preprocess::{fire_preprocess, ice_preprocess, BlurConfig, Preprocessed};
pub use video_dir::{read_rgb_frames, read_video, write_video, VideoManifest};
