//! Residue × functional-group interaction prediction and binding affinity
//! regression from protein sequences and ligand SMILES.

pub mod affinity;
pub mod evaluation;
pub mod fgparser;
pub mod finger_id;
pub mod formats;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod molgraph;
pub mod pairwise_unet;
pub mod protein;
pub mod scat;
pub mod tensor;
pub mod training;
