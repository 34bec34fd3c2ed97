//! Comparison embeddings: black-box VAE, per-record mechanistic fits,
//! time-contrastive learning, raw traces and DTW clustering.

mod blackbox;
mod dtw;
mod mechfit;
mod tcl;

pub use blackbox::{BlackBoxModel, BLACKBOX_LATENT};
pub use dtw::{dba, dtw_distance, dtw_kmeans, dtw_path, DtwKMeansResult};
pub use mechfit::{fit_dataset, fit_mechanistic, fit_with_rate, MechFitConfig, MechFitResult, MIN_OBSERVED};
pub use tcl::{tcl_embed, tcl_inputs, train_tcl, window_of, TclConfig, TclMode, TclModel, N_WINDOWS, TCL_HIDDEN};

use crate::datamodel::PpgrRecord;
use crate::error::Result;

/// The interpolated 60-point glucose trace.
pub fn raw_embedding(record: &PpgrRecord) -> Result<Vec<f64>> {
    record.interpolated_glucose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::tests::flat_record;
    use crate::error::Error;

    #[test]
    fn raw_embedding_interpolates() {
        let mut r = flat_record("p", "p_m01", 100.0);
        r.glucose[0] = None;
        r.glucose[10] = Some(120.0);
        r.glucose[11] = None;
        let e = raw_embedding(&r).unwrap();
        assert_eq!(e.len(), 60);
        assert_eq!(e[0], 100.0);
        assert_eq!(e[11], 110.0);
        r.glucose.iter_mut().for_each(|g| *g = None);
        assert!(matches!(raw_embedding(&r), Err(Error::AllMissing(_))));
    }
}
