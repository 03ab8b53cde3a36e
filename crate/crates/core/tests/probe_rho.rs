//! Scratch probe: replay the setup pipeline with per-level diagnostics.

use aggmg_core::dg::{assemble, ProblemSpec};
use aggmg_core::hierarchy::{init_candidates, tentative_prolongator, RankRule, SetupConfig};
use aggmg_core::linalg::{svd, BlockPartition, DenseMatrix};
use aggmg_core::smoother::{apply_prolongation_smoothing, calibrate_smoother, smooth, StopRule};
use aggmg_core::meshgraph::build_cartesian;
use aggmg_core::partition::build_hierarchy;

fn prefix_sums(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut acc = 0usize;
    for &s in sizes {
        out.push(acc);
        acc += s;
    }
    out
}

fn replay(label: &str, spec: &ProblemSpec) {
    let cfg = SetupConfig::default();
    let sys = assemble(spec).unwrap();
    let (graph, _geo) = build_cartesian(&spec.mesh).unwrap();
    let agg = build_hierarchy(&graph, spec.mesh.dimension).unwrap();
    let n_cut = cfg.resolved_n_cut(agg.d);
    println!("== {label}: n={} n_cut={n_cut} agg counts {:?}", sys.n_dofs(), agg.counts);

    let b0 = init_candidates(&graph, &agg, cfg.oversample, cfg.seed.wrapping_add(1)).unwrap();
    println!("   r = {} candidate columns", b0.ncols);

    let mut unit_sizes: Vec<usize> = graph.dof_counts.clone();
    let mut a_k = sys.a.clone();
    let mut b_k = b0;

    for t in 1..agg.n_levels() {
        let n = a_k.nrows;
        let blocks = BlockPartition::from_sizes(&unit_sizes).unwrap();
        let smoother = calibrate_smoother(
            &a_k,
            cfg.smoother,
            blocks,
            cfg.q,
            cfg.seed.wrapping_add(1000 + (t as u64 - 1)),
        )
        .unwrap();

        // smooth each column, tracking sweep counts
        let zero = vec![0.0; n];
        let stop = StopRule::Stagnation(cfg.gamma);
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut sweeps: Vec<usize> = Vec::new();
        for j in 0..b_k.ncols {
            let col: Vec<f64> = (0..n).map(|i| b_k.get(i, j)).collect();
            let (x, m) = smooth(&col, &a_k, &smoother, &zero, &stop).unwrap();
            cols.push(x);
            sweeps.push(m);
        }
        let mut sw = sweeps.clone();
        sw.sort_unstable();
        let b_smooth = DenseMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);

        // aggregate rows at this step
        let offsets = prefix_sums(&unit_sizes);
        let members = agg.members(t - 1);
        let parents = &agg.levels[t];
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); agg.counts[t]];
        for (u, elems) in members.iter().enumerate() {
            let p = parents[elems[0]];
            rows[p].extend(offsets[u]..offsets[u] + unit_sizes[u]);
        }

        // per-aggregate spectra
        let mut d_ranks = Vec::new(); // sigma > 1e-3 sigma1
        let mut m_ranks = Vec::new(); // sigma > max(m,n)*eps*sigma1
        let mut targets = Vec::new();
        for rws in &rows {
            let g = DenseMatrix::from_fn(rws.len(), b_smooth.ncols, |i, j| b_smooth.get(rws[i], j));
            let dec = svd(&g).unwrap();
            let s1 = dec.sigma[0].max(1e-300);
            let eps = (rws.len().max(b_smooth.ncols) as f64) * f64::EPSILON;
            d_ranks.push(dec.sigma.iter().take_while(|&&s| s > 1e-3 * s1).count());
            m_ranks.push(dec.sigma.iter().take_while(|&&s| s > eps * s1).count());
            targets.push((rws.len() + n_cut - 1) / n_cut);
        }
        let show = |v: &[usize]| {
            let mut w = v.to_vec();
            w.sort_unstable();
            (w[0], w[w.len() / 2], w[w.len() - 1])
        };
        println!(
            "   step {t}: dim {n}, sweeps(min/med/max) {:?}, target |A|/ncut {:?}, delta-rank {:?}, machine-rank {:?}",
            (sw[0], sw[sw.len() / 2], sw[sw.len() - 1]),
            show(&targets),
            show(&d_ranks),
            show(&m_ranks),
        );
        // sample spectrum of the first block
        let g = DenseMatrix::from_fn(rows[0].len(), b_smooth.ncols, |i, j| {
            b_smooth.get(rows[0][i], j)
        });
        let dec = svd(&g).unwrap();
        let s1 = dec.sigma[0].max(1e-300);
        let probe: Vec<String> = [0usize, 4, 9, 14, 19, 29, 49]
            .iter()
            .filter(|&&i| i < dec.sigma.len())
            .map(|&i| format!("s{}={:.1e}", i + 1, dec.sigma[i] / s1))
            .collect();
        println!("      block0 sigma/s1: {}", probe.join(" "));

        // advance with the CURRENT rule
        let (p_tent, kept) =
            tentative_prolongator(&b_smooth, &rows, RankRule::Coarsen { n_cut }, cfg.delta)
                .unwrap();
        let t_mat = apply_prolongation_smoothing(&a_k, &smoother, &p_tent).unwrap();
        let r_mat = t_mat.transpose();
        let a_next = r_mat
            .sparse_product(&a_k.sparse_product(&t_mat).unwrap())
            .unwrap();
        let b_next = r_mat.spmm_dense(&b_smooth).unwrap();
        a_k = a_next;
        b_k = b_next;
        unit_sizes = kept;
        let total: usize = unit_sizes.iter().sum();
        println!("      kept -> next dim {total}");
    }
}

#[test]
fn probe() {
    let mut ip4 = ProblemSpec::poisson_ip(3, 4, 1);
    ip4.penalty = Some(8.0);
    replay("IP  d3 M4 p1 pen8", &ip4);
    replay("LDG d3 M4 p1", &ProblemSpec::poisson_ldg(3, 4, 1));
}

fn slow_mode(label: &str, spec: &ProblemSpec) {
    use aggmg_core::hierarchy::build;
    use aggmg_core::linalg::{dense_lu_solve, dot, norm2};
    use aggmg_core::solver::{vcycle, CycleConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    let cfg = SetupConfig::default();
    let cycle = CycleConfig::default();
    let sys = assemble(spec).unwrap();
    let (graph, _geo) = build_cartesian(&spec.mesh).unwrap();
    let agg = build_hierarchy(&graph, spec.mesh.dimension).unwrap();
    let h = build(sys.a.clone(), &graph, &agg, &cfg).unwrap();
    let n = sys.n_dofs();
    let a = &sys.a;

    // dominant error mode of the V-cycle iteration via power iteration on
    // the homogeneous problem
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut e: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nr = norm2(&e);
    e.iter_mut().for_each(|v| *v /= nr);
    let mut factor = 0.0;
    for _ in 0..40 {
        let ae = a.spmv(&e).unwrap();
        let neg: Vec<f64> = ae.iter().map(|v| -v).collect();
        let du = vcycle(&h, 0, &neg, &cycle).unwrap();
        for (ei, di) in e.iter_mut().zip(&du) {
            *ei += di;
        }
        factor = norm2(&e);
        e.iter_mut().for_each(|v| *v /= factor);
    }

    // how smooth is the persistent mode?
    let ae = a.spmv(&e).unwrap();
    let rayleigh = dot(&e, &ae);
    let lvl0 = &h.levels()[0];
    let rho0 = lvl0.smoother.rho_estimate;

    // can the first coarse space represent it? least squares against the
    // actual (smoothed) transfer
    let t = h.levels()[1].t_to_finer.as_ref().unwrap();
    let tt = t.transpose();
    let gram = tt.sparse_product(t).unwrap().to_dense();
    let rhs = tt.spmv(&e).unwrap();
    let c = dense_lu_solve(&gram, &rhs).unwrap();
    let tc = t.spmv(&c).unwrap();
    let rep: f64 = e
        .iter()
        .zip(&tc)
        .map(|(ei, ti)| (ei - ti) * (ei - ti))
        .sum::<f64>()
        .sqrt();

    // smoother-only contraction on the mode (3 sweeps)
    let zero = vec![0.0; n];
    let (sm, _) = smooth(&e, a, &lvl0.smoother, &zero, &StopRule::FixedCount(3)).unwrap();
    let sm_factor = norm2(&sm);

    println!(
        "== {label}: cycle factor {factor:.4}, rayleigh/rho {:.3e}, coarse rep err {rep:.3e}, 3-sweep smoother factor {sm_factor:.4}",
        rayleigh / rho0
    );
    let dims: Vec<usize> = (0..h.n_levels()).map(|k| h.dim(k)).collect();
    println!("   dims {dims:?}");

    // is the mode within the span of the smoothed candidate block itself,
    // and within the unsmoothed tentative prolongator?
    let bs = &h.levels()[0].candidates;
    let r = bs.ncols;
    let mut gram = DenseMatrix::zeros(r, r);
    let mut rhs_b = vec![0.0; r];
    for i in 0..r {
        let ci: Vec<f64> = (0..n).map(|k| bs.get(k, i)).collect();
        rhs_b[i] = dot(&ci, &e);
        for j in i..r {
            let cj: Vec<f64> = (0..n).map(|k| bs.get(k, j)).collect();
            let g = dot(&ci, &cj);
            gram.set(i, j, g);
            gram.set(j, i, g);
        }
    }
    // ridge for near-singular gram
    for i in 0..r {
        let g = gram.get(i, i);
        gram.set(i, i, g * (1.0 + 1e-12) + 1e-300);
    }
    let cb = dense_lu_solve(&gram, &rhs_b).unwrap();
    let mut fit = vec![0.0; n];
    for i in 0..r {
        for k in 0..n {
            fit[k] += bs.get(k, i) * cb[i];
        }
    }
    let rep_b: f64 = e
        .iter()
        .zip(&fit)
        .map(|(ei, ti)| (ei - ti) * (ei - ti))
        .sum::<f64>()
        .sqrt();

    // unsmoothed tentative prolongator: rebuild it from the stored block
    // structure of level 1 rows
    let agg_rows = {
        let offsets = prefix_sums(&graph.dof_counts);
        let members = agg.members(0);
        let parents = &agg.levels[1];
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); agg.counts[1]];
        for (u, elems) in members.iter().enumerate() {
            let p = parents[elems[0]];
            rows[p].extend(offsets[u]..offsets[u] + graph.dof_counts[u]);
        }
        rows
    };
    let n_cut = cfg.resolved_n_cut(agg.d);
    let (p_tent, _) =
        tentative_prolongator(bs, &agg_rows, RankRule::Coarsen { n_cut }, cfg.delta).unwrap();
    let pte = p_tent.transpose().spmv(&e).unwrap();
    let ppte = p_tent.spmv(&pte).unwrap();
    let rep_p: f64 = e
        .iter()
        .zip(&ppte)
        .map(|(ei, ti)| (ei - ti) * (ei - ti))
        .sum::<f64>()
        .sqrt();
    println!("   rep err in span(B_smooth) {rep_b:.3e}, in range(P_tent) {rep_p:.3e}");
}

#[test]
fn probe_slow_mode() {
    slow_mode("LDG d3 M3 p1", &ProblemSpec::poisson_ldg(3, 3, 1));
    slow_mode("IP  d3 M3 p1", &ProblemSpec::poisson_ip(3, 3, 1));
}

// ---- manual hierarchy with configurable candidate smoothing ----

struct MiniLevel {
    a: SparseMatrix,
    sm: aggmg_core::smoother::SmootherSpec,
    t: Option<SparseMatrix>, // to finer
}

struct Mini {
    levels: Vec<MiniLevel>,
    bottom: aggmg_core::linalg::DenseLu,
}

use aggmg_core::linalg::SparseMatrix;

#[derive(Clone, Copy)]
enum CandStop {
    Stag,
    Fixed(usize),
    AStag,
}

fn mini_build(spec: &ProblemSpec, sweeps: Option<usize>, cap_by_rank: bool) -> (Mini, Vec<f64>) {
    mini_build_full(spec, match sweeps { Some(m) => CandStop::Fixed(m), None => CandStop::Stag }, cap_by_rank)
}

fn mini_build_full(spec: &ProblemSpec, stop_kind: CandStop, cap_by_rank: bool) -> (Mini, Vec<f64>) {
    use aggmg_core::linalg::DenseLu;

    let cfg = SetupConfig::default();
    let sys = assemble(spec).unwrap();
    let (graph, _geo) = build_cartesian(&spec.mesh).unwrap();
    let agg = build_hierarchy(&graph, spec.mesh.dimension).unwrap();
    let n_cut = cfg.resolved_n_cut(agg.d);

    let b0 = init_candidates(&graph, &agg, cfg.oversample, cfg.seed.wrapping_add(1)).unwrap();
    let mut unit_sizes: Vec<usize> = graph.dof_counts.clone();
    let mut a_k = sys.a.clone();
    let mut b_k = b0;
    let mut levels: Vec<MiniLevel> = Vec::new();
    let mut incoming: Option<SparseMatrix> = None;

    for t in 1..agg.n_levels() {
        let n = a_k.nrows;
        let blocks = BlockPartition::from_sizes(&unit_sizes).unwrap();
        let probe_q: usize = std::env::var("PROBE_Q")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(cfg.q);
        let smoother = calibrate_smoother(
            &a_k,
            cfg.smoother,
            blocks,
            probe_q,
            cfg.seed.wrapping_add(1000 + (t as u64 - 1)),
        )
        .unwrap();
        if std::env::var("PROBE_SWEEPS").is_ok() {
            eprintln!(
                "   [level {} rho_est {:.4} omega {:.4}]",
                t - 1,
                smoother.rho_estimate,
                smoother.omega
            );
        }
        let zero = vec![0.0; n];
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut sweeps_used: Vec<usize> = Vec::new();
        for j in 0..b_k.ncols {
            let col: Vec<f64> = (0..n).map(|i| b_k.get(i, j)).collect();
            let mut x = match stop_kind {
                CandStop::Fixed(m) => {
                    let (x, _) =
                        smooth(&col, &a_k, &smoother, &zero, &StopRule::FixedCount(m)).unwrap();
                    sweeps_used.push(m);
                    x
                }
                CandStop::Stag => {
                    let (x, m) =
                        smooth(&col, &a_k, &smoother, &zero, &StopRule::Stagnation(cfg.gamma))
                            .unwrap();
                    sweeps_used.push(m);
                    x
                }
                CandStop::AStag => {
                    // stagnation in the energy norm sqrt(x'Ax)
                    let mut x = col;
                    let anorm = |v: &[f64]| {
                        let av = a_k.spmv(v).unwrap();
                        aggmg_core::linalg::dot(v, &av).max(0.0).sqrt()
                    };
                    let mut prev = anorm(&x);
                    let mut used = 100;
                    for m in 1..=100 {
                        let (xn, _) =
                            smooth(&x, &a_k, &smoother, &zero, &StopRule::FixedCount(1)).unwrap();
                        x = xn;
                        let cur = anorm(&x);
                        if cur == 0.0 {
                            used = m;
                            break;
                        }
                        let ratio = prev / cur;
                        let nr = aggmg_core::linalg::norm2(&x);
                        x.iter_mut().for_each(|v| *v /= nr);
                        prev = cur / nr;
                        if ratio < 1.0 + cfg.gamma {
                            used = m;
                            break;
                        }
                    }
                    sweeps_used.push(used);
                    x
                }
            };
            let nr = aggmg_core::linalg::norm2(&x);
            if nr > 0.0 {
                x.iter_mut().for_each(|v| *v /= nr);
            }
            cols.push(x);
        }
        if std::env::var("PROBE_SWEEPS").is_ok() {
            let mut sw = sweeps_used.clone();
            sw.sort_unstable();
            eprintln!(
                "   [level {} sweeps min/med/max = {}/{}/{}]",
                t - 1,
                sw[0],
                sw[sw.len() / 2],
                sw[sw.len() - 1]
            );
        }
        let b_smooth = DenseMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);

        let offsets = prefix_sums(&unit_sizes);
        let members = agg.members(t - 1);
        let parents = &agg.levels[t];
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); agg.counts[t]];
        for (u, elems) in members.iter().enumerate() {
            let p = parents[elems[0]];
            rows[p].extend(offsets[u]..offsets[u] + unit_sizes[u]);
        }

        // per-aggregate SVD keep: target, optionally capped by delta rank
        let mut kept = Vec::new();
        let mut triplets = Vec::new();
        let mut col0 = 0usize;
        for rws in &rows {
            let g = DenseMatrix::from_fn(rws.len(), b_smooth.ncols, |i, j| b_smooth.get(rws[i], j));
            let dec = svd(&g).unwrap();
            let s1 = dec.sigma[0].max(1e-300);
            let target = (rws.len() + n_cut - 1) / n_cut;
            let eps_rank = dec
                .sigma
                .iter()
                .take_while(|&&s| s > 1e-12 * s1)
                .count()
                .max(1);
            let d_rank = dec
                .sigma
                .iter()
                .take_while(|&&s| s > cfg.delta * s1)
                .count()
                .max(1);
            let s = if cap_by_rank {
                target.min(d_rank)
            } else {
                target.min(eps_rank)
            };
            for c in 0..s {
                for (i, &row) in rws.iter().enumerate() {
                    let v = dec.u.get(i, c);
                    if v != 0.0 {
                        triplets.push((row, col0 + c, v));
                    }
                }
            }
            kept.push(s);
            col0 += s;
        }
        let p_tent = SparseMatrix::from_triplets(a_k.nrows, col0, &triplets).unwrap();
        let t_mat = apply_prolongation_smoothing(&a_k, &smoother, &p_tent).unwrap();
        let r_mat = t_mat.transpose();
        let a_next = r_mat
            .sparse_product(&a_k.sparse_product(&t_mat).unwrap())
            .unwrap();
        let b_next = r_mat.spmm_dense(&b_smooth).unwrap();
        levels.push(MiniLevel {
            a: a_k,
            sm: smoother,
            t: incoming.take(),
        });
        incoming = Some(t_mat);
        a_k = a_next;
        b_k = b_next;
        unit_sizes = kept;
    }
    let blocks = BlockPartition::from_sizes(&unit_sizes).unwrap();
    let smoother = calibrate_smoother(
        &a_k,
        cfg.smoother,
        blocks,
        cfg.q,
        cfg.seed.wrapping_add(1000 + levels.len() as u64),
    )
    .unwrap();
    let bottom = DenseLu::factor(&a_k.to_dense()).unwrap();
    levels.push(MiniLevel {
        a: a_k,
        sm: smoother,
        t: incoming.take(),
    });
    (Mini { levels, bottom }, sys.f.clone())
}

fn mini_relax(lv: &MiniLevel, x: &mut [f64], b: &[f64], sweeps: usize) {
    let n = lv.a.nrows;
    let mut z = vec![0.0; n];
    for _ in 0..sweeps {
        let ax = lv.a.spmv(x).unwrap();
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        lv.sm.apply_preconditioner_into(Some(&lv.a), &r, &mut z).unwrap();
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += lv.sm.omega * zi;
        }
    }
}

fn mini_vcycle(m: &Mini, k: usize, b: &[f64]) -> Vec<f64> {
    if k + 1 == m.levels.len() {
        return m.bottom.solve(b);
    }
    let lv = &m.levels[k];
    let mut x = vec![0.0; lv.a.nrows];
    mini_relax(lv, &mut x, b, 3);
    let ax = lv.a.spmv(&x).unwrap();
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let t = m.levels[k + 1].t.as_ref().unwrap();
    let rc = t.transpose().spmv(&r).unwrap();
    let ec = mini_vcycle(m, k + 1, &rc);
    let e = t.spmv(&ec).unwrap();
    for (xi, ei) in x.iter_mut().zip(&e) {
        *xi += ei;
    }
    mini_relax(lv, &mut x, b, 3);
    x
}

fn mini_solve(m: &Mini, f: &[f64]) -> (usize, bool) {
    use aggmg_core::linalg::norm2;
    let n = f.len();
    let nf = norm2(f);
    let mut u = vec![0.0; n];
    let mut r = f.to_vec();
    for it in 1..=50 {
        let du = mini_vcycle(m, 0, &r);
        for (ui, di) in u.iter_mut().zip(&du) {
            *ui += di;
        }
        let au = m.levels[0].a.spmv(&u).unwrap();
        r = f.iter().zip(&au).map(|(fi, ai)| fi - ai).collect();
        if norm2(&r) / nf < 1e-7 {
            return (it, true);
        }
    }
    (50, false)
}

#[test]
fn probe_sweep_effect() {
    for (label, spec) in [
        ("LDG M3", ProblemSpec::poisson_ldg(3, 3, 1)),
        ("IP  M3", ProblemSpec::poisson_ip(3, 3, 1)),
    ] {
        for (tag, sweeps, cap) in [
            ("stag +dcap", None, true),
            ("stag nocap", None, false),
            ("m=3  nocap", Some(3), false),
            ("m=5  nocap", Some(5), false),
            ("m=8  nocap", Some(8), false),
            ("m=12 nocap", Some(12), false),
            ("m=20 nocap", Some(20), false),
            ("m=40 nocap", Some(40), false),
        ] {
            let (mini, f) = mini_build(&spec, sweeps, cap);
            let dims: Vec<usize> = mini.levels.iter().map(|l| l.a.nrows).collect();
            let (iters, conv) = mini_solve(&mini, &f);
            println!("{label} {tag}: iters {iters} conv {conv} dims {dims:?}");
        }
    }
}

#[test]
fn probe_penalty_and_stop() {
    let mk = |kind: &str, m: u32, pen: Option<f64>| -> ProblemSpec {
        let mut s = match kind {
            "ip" => ProblemSpec::poisson_ip(3, m, 1),
            _ => ProblemSpec::poisson_ldg(3, m, 1),
        };
        s.penalty = pen;
        s
    };
    let paper_pen = |m: u32| Some(m as f64 * 4.0 / 2.0);
    let cases: Vec<(String, ProblemSpec, CandStop)> = vec![
        // IP: width default vs paper penalty, three stop rules
        ("IP M3 width stag".into(), mk("ip", 3, None), CandStop::Stag),
        ("IP M3 paper stag".into(), mk("ip", 3, paper_pen(3)), CandStop::Stag),
        ("IP M3 paper m=8 ".into(), mk("ip", 3, paper_pen(3)), CandStop::Fixed(8)),
        ("IP M3 paper astag".into(), mk("ip", 3, paper_pen(3)), CandStop::AStag),
        ("IP M4 width stag".into(), mk("ip", 4, None), CandStop::Stag),
        ("IP M4 paper stag".into(), mk("ip", 4, paper_pen(4)), CandStop::Stag),
        ("IP M4 paper m=8 ".into(), mk("ip", 4, paper_pen(4)), CandStop::Fixed(8)),
        ("IP M4 paper astag".into(), mk("ip", 4, paper_pen(4)), CandStop::AStag),
        // LDG: boundary tau variants
        ("LDG M3 tau=8 stag".into(), mk("ldg", 3, None), CandStop::Stag),
        ("LDG M3 tau=2 stag".into(), mk("ldg", 3, Some(2.0)), CandStop::Stag),
        ("LDG M3 tau=1 stag".into(), mk("ldg", 3, Some(1.0)), CandStop::Stag),
        ("LDG M3 tau=8 m=8 ".into(), mk("ldg", 3, None), CandStop::Fixed(8)),
        ("LDG M3 tau=2 m=8 ".into(), mk("ldg", 3, Some(2.0)), CandStop::Fixed(8)),
        ("LDG M3 tau=1 m=8 ".into(), mk("ldg", 3, Some(1.0)), CandStop::Fixed(8)),
        ("LDG M3 tau=8 astag".into(), mk("ldg", 3, None), CandStop::AStag),
        ("LDG M3 tau=2 astag".into(), mk("ldg", 3, Some(2.0)), CandStop::AStag),
    ];
    for (label, spec, stop) in cases {
        let (mini, f) = mini_build_full(&spec, stop, false);
        let dims: Vec<usize> = mini.levels.iter().map(|l| l.a.nrows).collect();
        let (iters, conv) = mini_solve(&mini, &f);
        println!("{label}: iters {iters} conv {conv} dims {dims:?}");
    }
}

fn real_case(label: &str, spec: &ProblemSpec) {
    use aggmg_core::hierarchy::build;
    use aggmg_core::linalg::norm2;
    use aggmg_core::solver::{vcycle, CycleConfig};

    let cfg = SetupConfig::default();
    let cycle = CycleConfig::default();
    let sys = assemble(spec).unwrap();
    let (graph, _geo) = build_cartesian(&spec.mesh).unwrap();
    let agg = build_hierarchy(&graph, spec.mesh.dimension).unwrap();
    let t0 = std::time::Instant::now();
    let h = build(sys.a.clone(), &graph, &agg, &cfg).unwrap();
    let setup = t0.elapsed().as_secs_f64();
    let dims: Vec<usize> = h.levels().iter().map(|l| l.dof).collect();
    let oms: Vec<String> = h
        .levels()
        .iter()
        .map(|l| format!("{:.3}/{:.2}", l.smoother.omega, l.smoother.rho_estimate))
        .collect();
    // stationary MG iteration on the assembled system
    let f = &sys.f;
    let nf = norm2(f);
    let a = &sys.a;
    let mut u = vec![0.0; a.nrows];
    let mut iters = 0;
    let mut conv = false;
    for it in 1..=50 {
        let au = a.spmv(&u).unwrap();
        let r: Vec<f64> = f.iter().zip(&au).map(|(fi, ai)| fi - ai).collect();
        if norm2(&r) / nf < 1e-7 {
            iters = it - 1;
            conv = true;
            break;
        }
        let du = vcycle(&h, 0, &r, &cycle).unwrap();
        for (ui, di) in u.iter_mut().zip(&du) {
            *ui += di;
        }
        iters = it;
    }
    if !conv {
        let au = a.spmv(&u).unwrap();
        let r: Vec<f64> = f.iter().zip(&au).map(|(fi, ai)| fi - ai).collect();
        conv = norm2(&r) / nf < 1e-7;
    }
    println!(
        "{label}: iters {iters} conv {conv} dims {dims:?} omega/rho [{}] setup {setup:.1}s",
        oms.join(", ")
    );
}

#[test]
fn probe_sym() {
    use aggmg_core::hierarchy::build;
    use aggmg_core::linalg::{dot, norm2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    let mut spec = ProblemSpec::poisson_ip(3, 4, 1);
    spec.penalty = Some(8.0);
    let mut cfg = SetupConfig::default();
    cfg.kappa = 0;
    let sys = assemble(&spec).unwrap();
    let (graph, _geo) = build_cartesian(&spec.mesh).unwrap();
    let agg = build_hierarchy(&graph, spec.mesh.dimension).unwrap();
    let h = build(sys.a.clone(), &graph, &agg, &cfg).unwrap();

    for (k, lv) in h.levels().iter().enumerate().skip(1) {
        let a = lv.a.as_ref().unwrap();
        let n = a.nrows;
        // symmetry: compare x'Ay with y'Ax for random pairs, plus full
        // elementwise check via transpose
        let at = a.transpose();
        let mut max_asym = 0.0f64;
        let mut max_abs = 0.0f64;
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (j, v) in cols.iter().zip(vals) {
                let w = at.get(i, *j);
                max_asym = max_asym.max((v - w).abs());
                max_abs = max_abs.max(v.abs());
            }
        }
        // spectrum of A itself
        let mut rng = ChaCha8Rng::seed_from_u64(5150 + k as u64);
        let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let nr = norm2(&x);
        x.iter_mut().for_each(|v| *v /= nr);
        let mut lam_max = 0.0;
        for _ in 0..300 {
            let ax = a.spmv(&x).unwrap();
            lam_max = dot(&x, &ax);
            let nn = norm2(&ax);
            x = ax.iter().map(|v| v / nn).collect();
        }
        // smallest eigenvalue via power iteration on lam_max*I - A
        let mut y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let nr = norm2(&y);
        y.iter_mut().for_each(|v| *v /= nr);
        let mut shift_rq = 0.0;
        for _ in 0..600 {
            let ay = a.spmv(&y).unwrap();
            let z: Vec<f64> = y.iter().zip(&ay).map(|(yi, ai)| lam_max * yi - ai).collect();
            shift_rq = dot(&y, &z);
            let nn = norm2(&z);
            if nn == 0.0 {
                break;
            }
            y = z.iter().map(|v| v / nn).collect();
        }
        let lam_min = lam_max - shift_rq;
        println!(
            "level {k}: dim {n}, max|A-A'| {max_asym:.3e} (max|A| {max_abs:.3e}), lam_max {lam_max:.4e}, lam_min {lam_min:.4e}, cond {:.3e}",
            lam_max / lam_min.max(1e-300)
        );
    }
}

#[test]
fn probe_grid() {
    for m in [3u32, 4] {
        let mut ip = ProblemSpec::poisson_ip(3, m, 1);
        ip.penalty = Some(m as f64 * 4.0 / 2.0);
        real_case(&format!("IP  M{m} pen{}", m * 2), &ip);
    }
    for m in [3u32, 4] {
        let ldg = ProblemSpec::poisson_ldg(3, m, 1);
        real_case(&format!("LDG M{m}"), &ldg);
    }
}

#[test]
fn probe_estimator_spread() {
    let mut ip4 = ProblemSpec::poisson_ip(3, 4, 1);
    ip4.penalty = Some(8.0);
    for (label, spec) in [
        ("IP M4 pen8".to_string(), ip4),
        ("LDG M3".to_string(), ProblemSpec::poisson_ldg(3, 3, 1)),
        ("IP M3 pen6".to_string(), {
            let mut s = ProblemSpec::poisson_ip(3, 3, 1);
            s.penalty = Some(6.0);
            s
        }),
    ] {
        let sys = assemble(&spec).unwrap();
        let (graph, _geo) = build_cartesian(&spec.mesh).unwrap();
        let blocks = BlockPartition::from_sizes(&graph.dof_counts).unwrap();
        let mut ests = Vec::new();
        for seed in 0..12u64 {
            let sm = calibrate_smoother(
                &sys.a,
                SetupConfig::default().smoother,
                blocks.clone(),
                3,
                seed,
            )
            .unwrap();
            ests.push(sm.rho_estimate);
        }
        let truth = calibrate_smoother(
            &sys.a,
            SetupConfig::default().smoother,
            blocks.clone(),
            150,
            7,
        )
        .unwrap()
        .rho_estimate;
        let ratios: Vec<String> = ests.iter().map(|e| format!("{:.2}", e / truth)).collect();
        println!("{label}: rho_true {truth:.4}, single-start q=3 accuracy: {}", ratios.join(" "));
    }
}

#[test]
fn probe_divergence() {
    // the divergent configuration: IP M4, paper penalty 8, fixed 8 sweeps
    let mut spec = ProblemSpec::poisson_ip(3, 4, 1);
    spec.penalty = Some(8.0);
    let (mini, f) = mini_build_full(&spec, CandStop::Fixed(8), false);
    for (k, lv) in mini.levels.iter().enumerate() {
        // true spectral radius by long power iteration on P^{-1}A
        let n = lv.a.nrows;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut z = vec![0.0; n];
        let mut rho_true = 0.0;
        let mut traj = String::new();
        for step in 1..=400 {
            let ax = lv.a.spmv(&x).unwrap();
            lv.sm.apply_preconditioner_into(Some(&lv.a), &ax, &mut z).unwrap();
            rho_true = aggmg_core::linalg::norm2(&z);
            x = z.iter().map(|v| v / rho_true).collect();
            if [3usize, 6, 12, 24, 48, 96, 200, 400].contains(&step) {
                traj.push_str(&format!(" {step}:{rho_true:.3}"));
            }
        }
        println!(
            "level {k}: dim {n}, rho_est {:.4}, rho_true {:.4}, omega*rho_true {:.4}, traj{traj}",
            lv.sm.rho_estimate,
            rho_true,
            lv.sm.omega * rho_true
        );
    }
    // conditioning of the coarsest operator
    let bottom = &mini.levels.last().unwrap().a;
    let dec = svd(&bottom.to_dense()).unwrap();
    let smax = dec.sigma[0];
    let smin = dec.sigma[dec.sigma.len() - 1];
    println!("bottom: dim {}, sigma_max {smax:.3e}, sigma_min {smin:.3e}, cond {:.3e}", bottom.nrows, smax / smin);
    let (iters, conv) = mini_solve(&mini, &f);
    println!("solve: iters {iters} conv {conv}");
}
