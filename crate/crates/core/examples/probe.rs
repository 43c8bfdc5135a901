use ik_core::freefield::{check_intertwiner_relations, probe_relation};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which: i64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let cutoff: i64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2);
    let nmax: i64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1);
    let qcap: i64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(100);
    let qwin: i64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(16);
    let t0 = std::time::Instant::now();
    if which < 0 {
        match check_intertwiner_relations(cutoff, nmax, qcap, qwin) {
            Ok(rs) => {
                for r in rs {
                    println!("{}", r.one_line());
                }
            }
            Err(e) => println!("ERROR: {e}"),
        }
    } else {
        match probe_relation(which as usize, cutoff, nmax, qcap, qwin) {
            Ok(r) => println!("{}", r.one_line()),
            Err(e) => println!("ERROR: {e}"),
        }
    }
    println!("total {:?}", t0.elapsed());
    ik_core::vertex::prof::dump();
}
