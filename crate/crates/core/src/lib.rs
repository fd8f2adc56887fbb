pub mod biomarkers;
pub mod evalstats;
pub mod fuse;
pub mod phantom;
pub mod prep;
pub mod raster;
pub mod vesselgeom;
pub mod vesselgraph;
