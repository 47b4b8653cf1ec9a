use crate::dataset::{ObservationSeries, SensorNetwork};
use crate::error::{Error, Result};
use crate::graph::haversine;

/// Fill every sensor not flagged in `observed` with the mean of its `k`
/// nearest observed sensors (great-circle distance, ties by id), per step.
pub fn knn_impute(
    data: &ObservationSeries,
    network: &SensorNetwork,
    observed: &[bool],
    k: usize,
) -> Result<ObservationSeries> {
    let n = network.len();
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if data.n_sensors() != n || observed.len() != n {
        return Err(Error::Shape(format!(
            "{n} sensors, {} observation rows, {} flags",
            data.n_sensors(),
            observed.len()
        )));
    }
    let sources: Vec<usize> = (0..n).filter(|&i| observed[i]).collect();
    if sources.len() < k {
        return Err(Error::Config(format!(
            "{} observed sensors cannot supply {k} neighbours",
            sources.len()
        )));
    }
    let pts = network.positions();
    let ids: Vec<&str> = network.sensors().iter().map(|s| s.id.as_str()).collect();
    let t = data.n_steps();
    let mut out = data.clone();
    for i in (0..n).filter(|&i| !observed[i]) {
        let mut order = sources.clone();
        order.sort_by(|&a, &b| {
            haversine(pts[i], pts[a])
                .total_cmp(&haversine(pts[i], pts[b]))
                .then_with(|| ids[a].cmp(ids[b]))
        });
        for s in 0..t {
            let (mut sum, mut used) = (0.0, 0);
            for &j in &order {
                if data.is_observed(j, s) {
                    sum += f64::from(data.value(j, s));
                    used += 1;
                    if used == k {
                        break;
                    }
                }
            }
            if used > 0 {
                out.set(i, s, (sum / used as f64) as f32);
            } else {
                out.clear(i, s);
            }
        }
    }
    Ok(out)
}

/// Piecewise-linear upsampling between consecutive kept frames; steps past
/// the last frame hold its value. Output has `steps·sr_rate` columns.
pub fn linear_tsr(coarse: &ObservationSeries, sr_rate: usize) -> Result<ObservationSeries> {
    if sr_rate == 0 {
        return Err(Error::Config("sr rate must be at least 1".into()));
    }
    let (n, t) = (coarse.n_sensors(), coarse.n_steps());
    let fine = t * sr_rate;
    let mut values = Vec::with_capacity(n * fine);
    for i in 0..n {
        for s in 0..fine {
            let c = s / sr_rate;
            let f = (s % sr_rate) as f64 / sr_rate as f64;
            let a = f64::from(coarse.value(i, c));
            let v = if c + 1 < t {
                let b = f64::from(coarse.value(i, c + 1));
                a + (b - a) * f
            } else {
                a
            };
            values.push(v as f32);
        }
    }
    ObservationSeries::dense(n, fine, values, coarse.time_step() / sr_rate as f64, coarse.start())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sensor;
    use chrono::NaiveDateTime;

    fn series(n: usize, t: usize, values: Vec<f32>) -> ObservationSeries {
        ObservationSeries::dense(n, t, values, 60.0, NaiveDateTime::default()).unwrap()
    }

    #[test]
    fn equidistant_pair_averages() {
        let net = SensorNetwork::with_default_boundary(vec![
            Sensor::original("a", -1.0, 0.0),
            Sensor::original("b", 1.0, 0.0),
            Sensor::original("m", 0.0, 0.0),
            Sensor::original("far", 0.0, 5.0),
        ])
        .unwrap();
        let data = series(4, 1, vec![10.0, 20.0, 0.0, 99.0]);
        let flags = [true, true, false, true];
        assert_eq!(knn_impute(&data, &net, &flags, 2).unwrap().value(2, 0), 15.0);
        assert_eq!(knn_impute(&data, &net, &flags, 1).unwrap().value(2, 0), 10.0);
        assert!(knn_impute(&data, &net, &flags, 4).is_err());
    }

    #[test]
    fn linear_upsampling() {
        let up = linear_tsr(&series(1, 2, vec![0.0, 4.0]), 4).unwrap();
        assert_eq!(&up.row(0)[..5], &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let flat = linear_tsr(&series(1, 3, vec![2.5; 3]), 2).unwrap();
        assert!(flat.row(0).iter().all(|&v| v == 2.5));
        assert_eq!(flat.time_step(), 30.0);
    }
}
