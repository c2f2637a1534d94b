use std::ffi::{CStr, CString};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use von::baselines::{brute_force, Method};
use von::instance::{uniform_points, Instance};
use von::{CheckpointInfo, DecoderVariant, EncoderConfig, Metric, MetricParams, Model, ModelConfig, QualityMetric};
use von_ffi::*;

fn last_error() -> String {
    let p = von_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn point_set(coords: &[f64], n: usize, dim: usize) -> *mut VonPointSet {
    let mut ps = ptr::null_mut();
    assert_eq!(unsafe { von_point_set_new(coords.as_ptr(), n, dim, &mut ps) }, VonStatus::Ok);
    ps
}

fn checkpoint(dir: &TempDir, metric: Metric) -> CString {
    let enc = EncoderConfig { hidden_dim: 8, num_layers: 1, num_heads: 2, ff_dim: 16, ..EncoderConfig::new(2) };
    let model = Model::new(ModelConfig { encoder: enc, variant: DecoderVariant::Attention }, 4).unwrap();
    let path = dir.path().join("m.json");
    let info = CheckpointInfo { metric, metric_params: MetricParams::default(), train_config_hash: None, epochs_completed: 0 };
    model.save(&path, &info).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

#[test]
fn point_sets_round_trip_their_shape() {
    let coords = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let ps = point_set(&coords, 3, 2);
    let (mut n, mut d) = (0, 0);
    assert_eq!(unsafe { von_point_set_shape(ps, &mut n, &mut d) }, VonStatus::Ok);
    assert_eq!((n, d), (3, 2));
    unsafe { von_point_set_free(ps) };
    unsafe { von_point_set_free(ptr::null_mut()) };
}

#[test]
fn invalid_point_sets_are_rejected() {
    let mut ps = ptr::null_mut();
    let nan = [f64::NAN, 0.0];
    assert_eq!(unsafe { von_point_set_new(nan.as_ptr(), 1, 2, &mut ps) }, VonStatus::InvalidArgument);
    assert!(ps.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { von_point_set_new(ptr::null(), 1, 2, &mut ps) }, VonStatus::NullPointer);
    assert!(last_error().contains("coords"));
}

#[test]
fn baseline_order_matches_the_library() {
    let pts = uniform_points(7, 2, &mut ChaCha8Rng::seed_from_u64(8));
    let ps = point_set(pts.coords(), 7, 2);
    let (method, metric) = (CString::new("brute").unwrap(), CString::new("tsp").unwrap());
    let mut order = [0usize; 7];
    let mut loss = 0.0;
    let st = unsafe { von_baseline_order(method.as_ptr(), metric.as_ptr(), ps, 0, order.as_mut_ptr(), order.len(), &mut loss) };
    assert_eq!(st, VonStatus::Ok, "{}", last_error());
    let inst = Instance::from_points(Metric::Tsp, &MetricParams::default(), pts.clone()).unwrap();
    let (best, best_loss) = brute_force(&inst.ctx, &Metric::Tsp, 7).unwrap();
    assert_eq!((&order[..], loss), (best.as_slice(), best_loss));

    let mut score = 0.0;
    assert_eq!(unsafe { von_metric_score(metric.as_ptr(), ps, order.as_ptr(), 7, &mut score) }, VonStatus::Ok);
    assert_eq!(score, best_loss);

    let seeded = |seed| {
        let sa = CString::new("sa").unwrap();
        let mut o = [0usize; 7];
        assert_eq!(unsafe { von_baseline_order(sa.as_ptr(), metric.as_ptr(), ps, seed, o.as_mut_ptr(), 7, ptr::null_mut()) }, VonStatus::Ok);
        o
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(seeded(3).to_vec(), Method::Sa.solve(&inst.ctx, &Metric::Tsp, &mut rng).unwrap().0.into_vec());
    unsafe { von_point_set_free(ps) };
}

#[test]
fn status_codes_name_the_failure() {
    let ps = point_set(&[0.0, 0.0, 1.0, 1.0, 2.0, 0.5], 3, 2);
    let mut order = [0usize; 3];
    let (nn, bad) = (CString::new("nn").unwrap(), CString::new("nope").unwrap());
    assert_eq!(unsafe { von_baseline_order(nn.as_ptr(), bad.as_ptr(), ps, 0, order.as_mut_ptr(), 3, ptr::null_mut()) }, VonStatus::UnknownMetric);
    assert!(last_error().contains("nope"));

    let tsp = CString::new("tsp").unwrap();
    assert_eq!(unsafe { von_baseline_order(nn.as_ptr(), tsp.as_ptr(), ps, 0, order.as_mut_ptr(), 2, ptr::null_mut()) }, VonStatus::BufferTooSmall);
    assert_eq!(unsafe { von_baseline_order(bad.as_ptr(), tsp.as_ptr(), ps, 0, order.as_mut_ptr(), 3, ptr::null_mut()) }, VonStatus::InvalidArgument);

    let dup = [0usize, 0, 1];
    let mut score = 0.0;
    assert_eq!(unsafe { von_metric_score(tsp.as_ptr(), ps, dup.as_ptr(), 3, &mut score) }, VonStatus::InvalidArgument);

    let same = point_set(&[0.5; 6], 3, 2);
    let mi = CString::new("morans_i").unwrap();
    let id = [0usize, 1, 2];
    assert_eq!(unsafe { von_metric_score(mi.as_ptr(), same, id.as_ptr(), 3, &mut score) }, VonStatus::DegenerateMetric);
    assert!(last_error().contains("morans_i"));
    unsafe {
        von_point_set_free(ps);
        von_point_set_free(same);
    }
}

#[test]
fn models_load_and_order() {
    let dir = TempDir::new().unwrap();
    let path = checkpoint(&dir, Metric::Stress);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { von_model_load(path.as_ptr(), &mut model) }, VonStatus::Ok, "{}", last_error());

    let mut dim = 0;
    assert_eq!(unsafe { von_model_input_dim(model, &mut dim) }, VonStatus::Ok);
    assert_eq!(dim, 2);
    let mut key = [0 as std::ffi::c_char; 16];
    assert_eq!(unsafe { von_model_metric(model, key.as_mut_ptr(), key.len()) }, VonStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(key.as_ptr()) }.to_str().unwrap(), "stress");
    assert_eq!(unsafe { von_model_metric(model, key.as_mut_ptr(), 6) }, VonStatus::BufferTooSmall);

    let pts = uniform_points(9, 2, &mut ChaCha8Rng::seed_from_u64(1));
    let ps = point_set(pts.coords(), 9, 2);
    let mut order = [0usize; 9];
    let mut loss = 0.0;
    assert_eq!(unsafe { von_model_order(model, ps, order.as_mut_ptr(), 9, &mut loss) }, VonStatus::Ok);
    let (m, _) = Model::load(std::path::Path::new(path.to_str().unwrap())).unwrap();
    let expected = m.greedy(&pts).unwrap();
    assert_eq!(&order[..], expected.as_slice());
    let inst = Instance::from_points(Metric::Stress, &MetricParams::default(), pts).unwrap();
    assert_eq!(loss, Metric::Stress.loss(&inst.ctx, &expected).unwrap());

    let wide = point_set(&[0.0; 9], 3, 3);
    assert_eq!(unsafe { von_model_order(model, wide, order.as_mut_ptr(), 9, &mut loss) }, VonStatus::DimensionMismatch);
    unsafe {
        von_point_set_free(ps);
        von_point_set_free(wide);
        von_model_free(model);
    }
}

#[test]
fn corrupt_checkpoints_are_reported() {
    let dir = TempDir::new().unwrap();
    let path = checkpoint(&dir, Metric::Tsp);
    std::fs::write(dir.path().join("m.bin"), b"garbage").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { von_model_load(path.as_ptr(), &mut model) }, VonStatus::Checkpoint);
    assert!(model.is_null());
    let missing = CString::new(dir.path().join("none.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { von_model_load(missing.as_ptr(), &mut model) }, VonStatus::Io);
}
