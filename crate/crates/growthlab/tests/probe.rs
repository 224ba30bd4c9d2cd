use growthlab::contracting::{
    build_projection_table_with, fellow_travel_check, is_contracting_element_in,
    proj_diameter_with, AdmissiblePath, PathSegment, ProjectionTable, ScanOptions, XSet,
};
use growthlab::extension::canonical_ray;
use growthlab::presentation::stock;
use growthlab::space::{build_ball, SpaceGraph};
use growthlab::word::Word;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pd(ball: &SpaceGraph, table: &ProjectionTable, verts: &[u32]) -> u32 {
    let trusted: Vec<u32> = verts
        .iter()
        .copied()
        .take_while(|&v| table.included[v as usize])
        .collect();
    proj_diameter_with(ball, table, &trusted, &[]).unwrap()
}

#[test]
fn probe_raag_calibration() {
    let g = build_ball(&stock::cayley(stock::raag_path()), 8).unwrap();
    let al = &g.space().group().alphabet;
    let wp = g.wp();
    let gens = [
        al.parse_word("a c").unwrap(),
        al.parse_word("c a").unwrap(),
        al.parse_word("a c^-1").unwrap(),
    ];
    let tables: Vec<ProjectionTable> = (0..3)
        .map(|k| {
            build_projection_table_with(&g, &XSet::saturated_axis(&g, &gens[k]).unwrap(), true)
                .unwrap()
        })
        .collect();
    let radius = g.radius();
    let cap = (radius / 3).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut pool: Vec<u32> = (1..=cap)
        .flat_map(|d| g.layer(d).to_vec())
        .filter(|&v| g.in_orbit(v))
        .collect();
    pool.shuffle(&mut rng);
    let train: Vec<u32> = pool.into_iter().take(24).collect();
    eprintln!("train size {}", train.len());
    let mut words: Vec<Word> = Vec::new();
    for &v in &train {
        words.push(g.rep(v).clone());
        words.push(g.rep(v).inverse());
    }
    let mut tau_raw = 0u32;
    let mut argmax = String::new();
    for w in &words {
        let Some(v) = g.orbit_vertex(w) else { continue };
        let ray = canonical_ray(&g, v);
        let mut diams = [0u32; 3];
        for k in 0..3 {
            diams[k] = pd(&g, &tables[k], &ray);
        }
        let m = *diams.iter().min().unwrap();
        if m > tau_raw {
            tau_raw = m;
            argmax = format!("{} diams {:?}", al.print_word(w), diams);
        }
    }
    let tau = tau_raw + 1;
    eprintln!("tau {} (argmax {})", tau, argmax);

    let shallow: Vec<Word> = (1..=2u32)
        .flat_map(|d| g.layer(d).to_vec())
        .filter(|&v| g.in_orbit(v))
        .flat_map(|v| [g.rep(v).clone(), g.rep(v).inverse()])
        .collect();
    let mut uniq: Vec<Word> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for w in words.iter().chain(shallow.iter()) {
        if seen.insert(al.print_word(&wp.normal_form(w).word)) {
            uniq.push(w.clone());
        }
    }
    eprintln!("uniq {}", uniq.len());

    'dsearch: for d in 1..=cap {
        let mut power = None;
        for np in 1..=(4 * radius as i64) {
            if (0..3).all(|i| wp.length(&gens[i].pow(np)) as u32 > d) {
                power = Some(np);
                break;
            }
        }
        let Some(np) = power else {
            eprintln!("d={} no power", d);
            break;
        };
        let conns = [
            wp.normal_form(&gens[0].pow(np)).word,
            wp.normal_form(&gens[1].pow(np)).word,
            wp.normal_form(&gens[2].pow(np)).word,
        ];
        for gw in &uniq {
            for hw in &uniq {
                let vg = g.orbit_vertex(&gw.inverse()).unwrap();
                let vh = g.orbit_vertex(hw).unwrap();
                let in_ray = canonical_ray(&g, vg);
                let out_ray = canonical_ray(&g, vh);
                let mut pick = None;
                for k in 0..3 {
                    let pin = pd(&g, &tables[k], &in_ray);
                    let pout = pd(&g, &tables[k], &out_ray);
                    if pin <= tau && pout <= tau {
                        pick = Some(k);
                        break;
                    }
                }
                let Some(pick) = pick else {
                    eprintln!(
                        "d={} np={} NO PICK for ({}, {})",
                        d,
                        np,
                        al.print_word(gw),
                        al.print_word(hw)
                    );
                    continue 'dsearch;
                };
                let product = gw.multiply(&conns[pick]).multiply(hw);
                if wp.is_identity(&product).unwrap() {
                    eprintln!(
                        "d={} np={} TRIVIAL ({}) * {} * ({})",
                        d,
                        np,
                        al.print_word(gw),
                        al.print_word(&conns[pick]),
                        al.print_word(hw)
                    );
                    continue 'dsearch;
                }
            }
        }
        eprintln!("d={} np={} product half PASSED", d, np);

        let certs: Vec<_> = (0..3)
            .map(|k| is_contracting_element_in(&g, &gens[k], &ScanOptions::default()).unwrap())
            .collect();
        let pairs: Vec<(u32, u32)> = train
            .chunks(2)
            .filter(|c| c.len() == 2)
            .map(|c| (c[0], c[1]))
            .collect();
        let eps_cap = (radius / 3).max(2);
        for &(gv, hv) in &pairs {
            let gw = g.rep(gv).clone();
            let hw = g.rep(hv).clone();
            let vg = g.orbit_vertex(&gw.inverse()).unwrap();
            let vh = g.orbit_vertex(&hw).unwrap();
            let in_ray = canonical_ray(&g, vg);
            let out_ray = canonical_ray(&g, vh);
            let mut pick = None;
            for k in 0..3 {
                let pin = pd(&g, &tables[k], &in_ray);
                let pout = pd(&g, &tables[k], &out_ray);
                if pin <= tau && pout <= tau {
                    pick = Some(k);
                    break;
                }
            }
            let pick = pick.unwrap();
            // single_segment_path replica
            let vg2 = g.orbit_vertex(&gw).unwrap();
            let lead_in = canonical_ray(&g, vg2);
            let vf = g.orbit_vertex(&conns[pick]).unwrap();
            let f_ray = canonical_ray(&g, vf);
            let seg: Option<Vec<u32>> = f_ray
                .iter()
                .map(|&r| g.orbit_vertex(&gw.multiply(g.rep(r))))
                .collect();
            let Some(seg_verts) = seg else {
                eprintln!("pair ({}, {}) pick {}: segment out of ball",
                    al.print_word(&gw), al.print_word(&hw), pick);
                continue;
            };
            let gh = wp.normal_form(&gw.multiply(&conns[pick])).word;
            let vt = g.orbit_vertex(&wp.normal_form(&hw).word).map(|_| ());
            let _ = vt;
            let h_ray_v = g.orbit_vertex(&hw).unwrap();
            let h_ray = canonical_ray(&g, h_ray_v);
            let tail: Option<Vec<u32>> = h_ray
                .iter()
                .map(|&r| g.orbit_vertex(&gh.multiply(g.rep(r))))
                .collect();
            let Some(tail) = tail else {
                eprintln!("pair ({}, {}) pick {}: tail out of ball",
                    al.print_word(&gw), al.print_word(&hw), pick);
                continue;
            };
            let path = AdmissiblePath {
                lead_in,
                segments: vec![PathSegment {
                    verts: seg_verts,
                    set: XSet::shifted_axis(&gw, &gens[pick]),
                    certificate: Some(certs[pick].clone()),
                }],
                connectors: vec![tail],
            };
            match fellow_travel_check(&g, &path, d, tau) {
                Ok(v) => eprintln!(
                    "pair ({}, {}) pick {}: pass={} eps={:?} quasi={:?} eps_cap={} ll1={:?} entry={:?} exit={:?}",
                    al.print_word(&gw), al.print_word(&hw), pick,
                    v.pass, v.epsilon, v.quasi_constant, eps_cap, v.ll1, v.entry_bp, v.exit_bp
                ),
                Err(e) => eprintln!(
                    "pair ({}, {}) pick {}: ERROR {:?}",
                    al.print_word(&gw), al.print_word(&hw), pick, e
                ),
            }
        }
        break;
    }
}
