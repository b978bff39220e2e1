//! Volume I/O, slice extraction, case splitting and synthetic phantoms.

mod phantom;
mod slicing;
mod split;
mod vol1;

pub use phantom::{generate_phantom, phantom_lesions, Ellipsoid, PhantomConfig};
pub use slicing::{normalize_slice, slice_volume, Slice, SliceBatch};
pub use split::split_train_valid;
pub use vol1::{load_mask, load_volume, read_vol1, save_mask, save_volume, write_vol1, Vol1Contents};
