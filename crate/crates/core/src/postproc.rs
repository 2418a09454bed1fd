//! Positive-direction enforcement: predicted damage may not decrease in time.

use ndarray::Array2;

use crate::{CoreError, FieldFrame, Result, SampleSequence};

/// Running pixel-wise maximum over time, seeded with `anchor`.
///
/// `anchor` is the last known ground-truth frame before the predicted window,
/// or the first predicted frame when there is no history, in which case the
/// clamp is a no-op for the first step.
pub fn enforce_positive_direction(pred_seq: &SampleSequence, anchor: &FieldFrame) -> Result<SampleSequence> {
    if pred_seq.channels() != 1 || anchor.channels() != 1 {
        return Err(CoreError::Shape("positive direction applies to single-channel sequences".into()));
    }
    if anchor.dims() != pred_seq.dims() {
        return Err(CoreError::Shape(format!("anchor dims {:?} vs sequence dims {:?}", anchor.dims(), pred_seq.dims())));
    }
    let planes = running_max(&pred_seq.planes()?, &anchor.plane()?.to_owned());
    let frames = planes
        .into_iter()
        .zip(pred_seq.frames())
        .map(|(p, f)| FieldFrame::new(p.insert_axis(ndarray::Axis(2)), f.kind(), f.time_index()))
        .collect::<Result<Vec<_>>>()?;
    pred_seq.with_frames(frames)
}

/// The same running maximum on bare planes.
pub fn running_max(planes: &[Array2<f64>], anchor: &Array2<f64>) -> Vec<Array2<f64>> {
    let mut prev = anchor.clone();
    planes
        .iter()
        .map(|p| {
            let mut out = p.clone();
            out.zip_mut_with(&prev, |o, &q| {
                if q > *o {
                    *o = q;
                }
            });
            prev = out.clone();
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(traj: &[f64]) -> SampleSequence {
        SampleSequence::from_damage_planes("p", traj.iter().map(|&v| Array2::from_elem((1, 1), v)).collect()).unwrap()
    }

    fn traj(s: &SampleSequence) -> Vec<f64> {
        s.planes().unwrap().iter().map(|p| p[[0, 0]]).collect()
    }

    #[test]
    fn examples() {
        let zero = FieldFrame::damage(Array2::zeros((1, 1)), 0);
        assert_eq!(traj(&enforce_positive_direction(&seq(&[0.2, 0.5, 0.4]), &zero).unwrap()), vec![0.2, 0.5, 0.5]);
        assert_eq!(traj(&enforce_positive_direction(&seq(&[0.1, 0.2, 0.3]), &zero).unwrap()), vec![0.1, 0.2, 0.3]);
        let anchor = FieldFrame::damage(Array2::from_elem((1, 1), 0.3), 0);
        assert_eq!(traj(&enforce_positive_direction(&seq(&[0.1, 0.5]), &anchor).unwrap())[0], 0.3);
        let bad = FieldFrame::damage(Array2::zeros((2, 1)), 0);
        assert!(enforce_positive_direction(&seq(&[0.1]), &bad).is_err());
    }

    fn planes_strategy() -> impl Strategy<Value = (Vec<Array2<f64>>, Array2<f64>)> {
        (1usize..5, 1usize..5, 1usize..7).prop_flat_map(|(h, w, t)| {
            (
                prop::collection::vec(prop::collection::vec(0.0f64..1.0, h * w), t),
                prop::collection::vec(0.0f64..1.0, h * w),
            )
                .prop_map(move |(ps, a)| {
                    let ps = ps.into_iter().map(|v| Array2::from_shape_vec((h, w), v).unwrap()).collect();
                    (ps, Array2::from_shape_vec((h, w), a).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn monotone_idempotent_and_raising((planes, anchor) in planes_strategy()) {
            let s = SampleSequence::from_damage_planes("p", planes.clone()).unwrap();
            let a = FieldFrame::damage(anchor.clone(), 0);
            let once = enforce_positive_direction(&s, &a).unwrap();
            let twice = enforce_positive_direction(&once, &a).unwrap();
            prop_assert_eq!(&once, &twice);
            let out = once.planes().unwrap();
            for (t, p) in out.iter().enumerate() {
                prop_assert!(p.iter().zip(planes[t].iter()).all(|(o, i)| o >= i));
                prop_assert!(p.iter().zip(anchor.iter()).all(|(o, i)| o >= i));
                if t > 0 {
                    prop_assert!(p.iter().zip(out[t - 1].iter()).all(|(o, i)| o >= i));
                }
            }
            // monotone input with anchor = its first frame is left untouched
            let mono = enforce_positive_direction(&once, &FieldFrame::damage(out[0].clone(), 0)).unwrap();
            prop_assert_eq!(mono, once);
        }
    }
}
