//! Shared helpers for the integration suites: deterministic corpus
//! generators in the two ingestion schemas, plus fixture paths.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Path of a fixture shipped at the workspace root.
pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

// ── kdd-style corpus ────────────────────────────────────────────────

/// Class-conditional sampler for 41-feature KDD-style records.
pub fn write_kdd_style_csv(path: &Path, rows: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_of = |r: f64| -> usize {
        // normal 55%, dos 30%, probe 9%, r2l 5%, u2r 1%
        if r < 0.55 { 0 } else if r < 0.85 { 1 } else if r < 0.94 { 3 } else if r < 0.99 { 4 } else { 2 }
    };
    let attack_names: [&[&str]; 5] = [
        &["normal"],
        &["smurf", "neptune", "back", "teardrop"],
        &["buffer_overflow", "rootkit", "loadmodule"],
        &["ipsweep", "portsweep", "satan", "nmap"],
        &["guess_passwd", "warezclient", "imap"],
    ];
    let protocols = ["tcp", "udp", "icmp"];
    let services = ["http", "smtp", "ftp_data", "domain_u", "telnet", "private", "ecr_i"];
    let flags = ["SF", "S0", "REJ", "RSTR"];

    let mut text = String::new();
    let mut prev: Option<String> = None;
    for i in 0..rows {
        // ~3% exact duplicates to exercise dedupe
        if i > 0 && rng.random::<f64>() < 0.03 {
            if let Some(p) = &prev {
                text.push_str(p);
                continue;
            }
        }
        let class = class_of(rng.random());
        let mut line = String::new();
        let normal01 = |rng: &mut ChaCha8Rng, m: f64, s: f64| -> f64 {
            (m + s * rng.sample::<f64, _>(rand_distr::StandardNormal)).clamp(0.0, 1.0)
        };
        let pos = |rng: &mut ChaCha8Rng, m: f64, s: f64| -> f64 {
            (m + s * rng.sample::<f64, _>(rand_distr::StandardNormal)).max(0.0)
        };
        // c0 duration
        let duration = match class {
            0 => pos(&mut rng, 20.0, 15.0),
            1 => pos(&mut rng, 0.5, 0.5),
            2 => pos(&mut rng, 300.0, 60.0),
            3 => pos(&mut rng, 2.0, 2.0),
            _ => pos(&mut rng, 150.0, 40.0),
        };
        write!(line, "{duration:.2},").unwrap();
        // c1..c3 categorical
        let proto = match class {
            1 => if rng.random::<f64>() < 0.6 { "icmp" } else { "tcp" },
            3 => protocols[rng.random_range(0..3)],
            _ => if rng.random::<f64>() < 0.8 { "tcp" } else { "udp" },
        };
        let service = match class {
            0 => if rng.random::<f64>() < 0.6 { "http" } else { services[rng.random_range(0..7)] },
            1 => if rng.random::<f64>() < 0.5 { "ecr_i" } else { "private" },
            2 => if rng.random::<f64>() < 0.4 { "ftp" } else { "telnet" },
            3 => services[rng.random_range(0..7)],
            _ => if rng.random::<f64>() < 0.3 { "imap4" } else if rng.random::<f64>() < 0.6 { "ftp_data" } else { "telnet" },
        };
        let flag = match class {
            0 => "SF",
            1 => if rng.random::<f64>() < 0.7 { "S0" } else { "SF" },
            3 => if rng.random::<f64>() < 0.5 { "REJ" } else { "RSTR" },
            _ => flags[rng.random_range(0..2)],
        };
        write!(line, "{proto},{service},{flag},").unwrap();
        // c4 src_bytes, c5 dst_bytes
        let (sb, db) = match class {
            0 => (pos(&mut rng, 300.0, 150.0), pos(&mut rng, 2000.0, 900.0)),
            1 => (pos(&mut rng, 1000.0, 200.0), pos(&mut rng, 10.0, 10.0)),
            2 => (pos(&mut rng, 500.0, 200.0), pos(&mut rng, 400.0, 200.0)),
            3 => (pos(&mut rng, 20.0, 15.0), pos(&mut rng, 30.0, 25.0)),
            _ => (pos(&mut rng, 150.0, 80.0), pos(&mut rng, 600.0, 300.0)),
        };
        write!(line, "{sb:.0},{db:.0},").unwrap();
        // c6 land, c7 wrong_fragment, c8 urgent: mostly zero/constant
        write!(line, "0,{},0,", if class == 1 && rng.random::<f64>() < 0.2 { 1 } else { 0 }).unwrap();
        // c9 hot, c10 num_failed_logins
        let hot = match class { 4 => pos(&mut rng, 6.0, 1.5), 2 => pos(&mut rng, 3.0, 1.0), _ => pos(&mut rng, 0.1, 0.3) };
        let nfl = match class { 4 => pos(&mut rng, 4.0, 1.0), _ => pos(&mut rng, 0.02, 0.15) };
        write!(line, "{hot:.0},{nfl:.0},").unwrap();
        // c11 logged_in
        write!(line, "{},", match class { 0 => 1, 2 => 1, _ => if rng.random::<f64>() < 0.2 { 1 } else { 0 } }).unwrap();
        // c12 num_compromised, c13 root_shell, c14 su_attempted, c15 num_root
        let comp = match class { 2 => pos(&mut rng, 6.0, 1.5), _ => pos(&mut rng, 0.05, 0.2) };
        let root_shell = if class == 2 && rng.random::<f64>() < 0.9 { 1 } else { 0 };
        let num_root = match class { 2 => pos(&mut rng, 5.0, 1.5), _ => 0.0 };
        write!(line, "{comp:.0},{root_shell},0,{num_root:.0},").unwrap();
        // c16..c21: file/shell/access counters, almost always zero
        for _ in 0..6 {
            write!(line, "{:.0},", pos(&mut rng, 0.01, 0.05)).unwrap();
        }
        // c22 count, c23 srv_count
        let (count, srv) = match class {
            1 => (pos(&mut rng, 400.0, 80.0), pos(&mut rng, 400.0, 80.0)),
            2 => (pos(&mut rng, 60.0, 10.0), pos(&mut rng, 50.0, 8.0)),
            3 => (pos(&mut rng, 150.0, 60.0), pos(&mut rng, 30.0, 10.0)),
            4 => (pos(&mut rng, 5.0, 3.0), pos(&mut rng, 3.0, 2.0)),
            _ => (pos(&mut rng, 15.0, 10.0), pos(&mut rng, 12.0, 8.0)),
        };
        write!(line, "{count:.0},{srv:.0},").unwrap();
        // c24 serror_rate, c25 srv_serror_rate, c26 rerror_rate, c27 srv_rerror_rate
        let serror = match class { 1 => normal01(&mut rng, 0.85, 0.1), 3 => normal01(&mut rng, 0.4, 0.2), _ => normal01(&mut rng, 0.03, 0.05) };
        let rerror = match class { 3 => normal01(&mut rng, 0.6, 0.2), _ => normal01(&mut rng, 0.03, 0.05) };
        write!(line, "{serror:.2},{:.2},{rerror:.2},{:.2},",
            normal01(&mut rng, serror, 0.05), normal01(&mut rng, rerror, 0.05)).unwrap();
        // c28 same_srv_rate, c29 diff_srv_rate, c30 srv_diff_host_rate
        let same_srv = match class { 0 => normal01(&mut rng, 0.95, 0.05), 1 => normal01(&mut rng, 0.95, 0.05), 3 => normal01(&mut rng, 0.1, 0.08), _ => normal01(&mut rng, 0.8, 0.1) };
        write!(line, "{same_srv:.2},{:.2},{:.2},",
            normal01(&mut rng, 1.0 - same_srv, 0.05), normal01(&mut rng, 0.1, 0.1)).unwrap();
        // c31 dst_host_count, c32 dst_host_srv_count
        write!(line, "{:.0},{:.0},", pos(&mut rng, 200.0, 60.0), match class {
            0 => pos(&mut rng, 220.0, 40.0), 1 => pos(&mut rng, 240.0, 20.0), _ => pos(&mut rng, 30.0, 25.0) }).unwrap();
        // c33..c40: host-level rates echoing the flow-level ones
        for base in [same_srv, 1.0 - same_srv, serror, serror, rerror, rerror, 0.05, 0.05] {
            write!(line, "{:.2},", normal01(&mut rng, base, 0.08)).unwrap();
        }
        // label with trailing period
        let names = attack_names[class];
        writeln!(line, "{}.", names[rng.random_range(0..names.len())]).unwrap();
        text.push_str(&line);
        prev = Some(line);
    }
    std::fs::write(path, text).unwrap();
}

// ── cicids-style corpus ─────────────────────────────────────────────

pub fn write_cicids_style_csv(path: &Path, rows: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    // 78 features, header with the corpus's leading-space quirk
    for i in 0..78 {
        if i % 2 == 0 {
            write!(text, "Feature {i},").unwrap();
        } else {
            write!(text, " Feature {i},").unwrap();
        }
    }
    text.push_str(" Label\n");
    let attacks = ["DoS Hulk", "PortScan", "DDoS"];
    let mut prev: Option<String> = None;
    for i in 0..rows {
        if i > 0 && rng.random::<f64>() < 0.02 {
            if let Some(p) = &prev {
                text.push_str(p);
                continue;
            }
        }
        let r: f64 = rng.random();
        let class = if r < 0.70 { 0usize } else if r < 0.82 { 1 } else if r < 0.92 { 2 } else { 3 };
        let mut line = String::new();
        // 0.2% rows carry the corpus's Infinity/NaN artifacts
        let poisoned = rng.random::<f64>() < 0.002;
        for f in 0..78 {
            if poisoned && f == 11 {
                line.push_str(if rng.random::<f64>() < 0.5 { "Infinity," } else { "NaN," });
                continue;
            }
            // 16 informative features with class-dependent means
            let v = if f < 16 {
                let m = match class {
                    0 => 0.25 + 0.03 * (f % 5) as f64,
                    1 => 0.65 + 0.02 * (f % 7) as f64,
                    2 => if f % 2 == 0 { 0.75 } else { 0.15 },
                    _ => if f % 3 == 0 { 0.85 } else { 0.45 },
                };
                (m + 0.13 * rng.sample::<f64, _>(rand_distr::StandardNormal)).max(0.0)
            } else {
                // background features: shared distribution, some heavy-tailed
                let scale = 1.0 + (f % 7) as f64 * 100.0;
                scale * rng.random::<f64>()
            };
            write!(line, "{v:.4},").unwrap();
        }
        let label = if class == 0 {
            if rng.random::<f64>() < 0.5 { "BENIGN" } else { "Benign" }
        } else {
            attacks[class - 1]
        };
        writeln!(line, "{label}").unwrap();
        text.push_str(&line);
        prev = Some(line);
    }
    std::fs::write(path, text).unwrap();
}
