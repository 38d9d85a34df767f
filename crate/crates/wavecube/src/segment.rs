//! Multi-threaded volume segmentation. Cubes are independent, so workers
//! take interleaved cubes and the result is assembled in grid order, which
//! keeps the output identical to the sequential path.

use std::thread;

use wavecube_core::pipeline::{
    assemble, partition, PipelineError, Provenance, SegmentationResult, Segmenter,
};
use wavecube_core::{LabelVolume, Real, Volume};

pub fn segment_volume_parallel<T, S>(
    v: &Volume<T>,
    segmenter: &S,
    cube: [usize; 3],
    workers: usize,
    provenance: Provenance,
) -> Result<SegmentationResult, PipelineError>
where
    T: Real + Send + Sync,
    S: Segmenter<T> + Sync + ?Sized,
{
    let (grid, cubes) = partition(v, cube)?;
    let workers = workers.clamp(1, cubes.len().max(1));
    let origins = grid.origins();
    let mut slots: Vec<Option<Result<LabelVolume, PipelineError>>> = (0..cubes.len()).map(|_| None).collect();
    thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let cubes = &cubes;
                scope.spawn(move || {
                    (w..cubes.len())
                        .step_by(workers)
                        .map(|i| {
                            let r = segmenter
                                .segment_cube(&cubes[i])
                                .map_err(|source| PipelineError::Network { origin: origins[i], source });
                            (i, r)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("segmentation worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    let mut out = Vec::with_capacity(slots.len());
    for (i, slot) in slots.into_iter().enumerate() {
        out.push((origins[i], slot.expect("every cube visited")?));
    }
    Ok(SegmentationResult {
        labels: assemble(&grid, out)?,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use wavecube_core::arch::ArchError;
    use wavecube_core::pipeline::segment_volume;

    fn threshold(c: &Volume<f32>) -> Result<LabelVolume, ArchError> {
        Ok(c.map(|v| u8::from(v > 0.5)))
    }

    #[test]
    fn matches_sequential_for_any_worker_count() {
        let v = Volume::from_fn([20, 37, 33], |z, y, x| ((z * 7 + y * 3 + x) % 5) as f32 / 4.0).unwrap();
        let seq = segment_volume(&v, &threshold, [16, 16, 16], Provenance::default()).unwrap();
        for w in [1, 2, 3, 8, 100] {
            let par = segment_volume_parallel(&v, &threshold, [16, 16, 16], w, Provenance::default()).unwrap();
            assert_eq!(par.labels, seq.labels);
        }
    }

    #[test]
    fn reports_failing_cube() {
        let v = Volume::<f32>::zeros([16, 32, 16]).unwrap();
        let fail = |c: &Volume<f32>| -> Result<LabelVolume, ArchError> {
            if c.dims()[0] == 16 {
                Err(ArchError::UnknownStructure("x".into()))
            } else {
                threshold(c)
            }
        };
        let err = segment_volume_parallel(&v, &fail, [16, 16, 16], 2, Provenance::default()).unwrap_err();
        assert!(matches!(err, PipelineError::Network { origin: [0, 0, 0], .. }));
    }
}
