use bem_sysid::em::HyperParams;
use bem_sysid::filter::{ekf_predict, ekf_update, GaussianEstimate};
use bem_sysid::init::*;
use bem_sysid::model::*;
use bem_sysid::sim::*;
use nalgebra::{DMatrix, DVector};

fn main() {
    let subs = chain_substructures(2);
    let mut k = DMatrix::zeros(2, 2);
    let mut c = DMatrix::zeros(2, 2);
    for s in &subs {
        k += s * 700.0;
        c += s * 0.8;
    }
    let model = StructuralModel::new(
        DMatrix::identity(2, 2), k, c, vec![], vec![],
        DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        DMatrix::zeros(0, 2), DMatrix::zeros(0, 2), 0.002,
    ).unwrap();
    let cfg = SensorConfig { strain: vec![], disp: vec![0], vel: vec![], acc: vec![1], n_pseudo: 1 };
    let scenario = Scenario {
        duration: 4.0, theta: vec![], schedule: vec![],
        forces: vec![ForceSpec { kind: ForceKind::Gwn { std: 2.0 }, dof: Some(0) }],
        noise_percent: 0.0, initial_state: None,
    };
    let clean = simulate(&model, &cfg, &scenario, 17).unwrap();
    let data = add_noise(&clean, 1.0, 17);
    let obs = data.observations(&cfg).unwrap();
    let n = obs.nrows();
    let rm = reduce_model(&model, &cfg, &DVector::zeros(0)).unwrap();
    let mut q = DMatrix::<f64>::identity(5, 5) * 1e-9;
    q[(4, 4)] = 4.0;
    let mut r = DMatrix::<f64>::identity(3, 3) * 1e-6;
    r[(2, 2)] = 40.0;
    let st = stationary_gains(&rm, &q, &r).unwrap();
    let phi = HyperParams {
        mu0: DVector::zeros(5),
        p0: DMatrix::identity(5, 5) * 1e-2,
        q_a: q.clone(),
        r_a: r.clone(),
    };
    let mut cache = DiscretizationCache::new();
    let mut tv = GaussianEstimate::new(phi.mu0.clone(), phi.p0.clone());
    let mut cg = DVector::zeros(5);
    for k in 1..=n {
        let mut d = DVector::zeros(3);
        d.rows_mut(0, 2).copy_from(&obs.row(k - 1).transpose());
        let (pred, _) = ekf_predict(&tv, &model, &phi.q_a, &mut cache, k).unwrap();
        tv = ekf_update(&pred, &d, &model, &cfg, &phi.r_a, k).unwrap();
        let pred_cg = &rm.a_z * &cg;
        cg = &pred_cg + &st.k_gain * (&d - &rm.g_z * &pred_cg);
        if k % 200 == 0 {
            let diff = (&tv.mean - &cg).norm() / (1.0 + cg.norm());
            let pdiff = (&tv.cov - &st.p_filt).norm() / st.p_filt.norm();
            println!("step {k}: mean dev {diff:.3e}, cov dev {pdiff:.3e}");
        }
    }
}
