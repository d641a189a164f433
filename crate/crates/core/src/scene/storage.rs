use super::{GaussianField, Layout};

/// Magic, version, layout, count and feature dim (5 × 4 bytes) plus the
/// trailing CRC32.
pub const HEADER_BYTES: u64 = 5 * 4 + 4;

const MIB: f64 = 1024.0 * 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageReport {
    pub primitive_count: u64,
    pub bytes_per_primitive: u64,
    pub total_bytes: u64,
    pub layout: Layout,
}

impl StorageReport {
    pub fn for_counts(primitive_count: u64, feature_dim: usize, layout: Layout) -> Self {
        let bytes_per_primitive = 4 * (layout.scalars_without_feature() + feature_dim) as u64;
        Self {
            primitive_count,
            bytes_per_primitive,
            total_bytes: primitive_count * bytes_per_primitive + HEADER_BYTES,
            layout,
        }
    }

    /// Size in MiB.
    pub fn megabytes(&self) -> f64 {
        self.total_bytes as f64 / MIB
    }
}

/// Serialized size of `field` in its own layout; equals the length of the
/// file written by [`crate::scene::save_field`].
pub fn storage_report(field: &GaussianField) -> StorageReport {
    StorageReport::for_counts(field.len() as u64, field.feature_dim(), field.layout())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_scale_accounting() {
        let lite = StorageReport::for_counts(57_000, 256, Layout::Decoupled);
        assert_eq!(lite.bytes_per_primitive, 1068);
        assert!((lite.megabytes() / 58.8 - 1.0).abs() < 0.05, "{}", lite.megabytes());
        let coupled = StorageReport::for_counts(759_400, 256, Layout::Coupled);
        assert_eq!(coupled.bytes_per_primitive, 1260);
        assert!((coupled.megabytes() / 929.5 - 1.0).abs() < 0.05, "{}", coupled.megabytes());
        let ratio = lite.total_bytes as f64 / coupled.total_bytes as f64;
        assert!(ratio <= 0.07, "{ratio}");
    }

    #[test]
    fn equal_count_ratio_closed_form() {
        for d in [16usize, 64, 256] {
            let a = StorageReport::for_counts(1000, d, Layout::Decoupled);
            let b = StorageReport::for_counts(1000, d, Layout::Coupled);
            let expected = (11 + d) as f64 / (59 + d) as f64;
            let per = a.bytes_per_primitive as f64 / b.bytes_per_primitive as f64;
            assert!((per - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_field_is_header_only() {
        let r = storage_report(&GaussianField::empty(256));
        assert_eq!(r.total_bytes, HEADER_BYTES);
        assert_eq!(r.primitive_count, 0);
    }
}
