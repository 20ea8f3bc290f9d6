//! Which confusion matrices over 20 test videos reproduce a reported row of
//! accuracy, precision, recall and F1 (percent, as rounded in the table)?

use stvc::eval::{consistent_matrices, metrics, Reported};

fn main() {
    let rows = [
        ("3D CNN", [(90.0, 0), (90.9, 1), (90.9, 1), (90.91, 2)]),
        ("ConvLSTM2D", [(85.0, 0), (90.0, 0), (81.82, 2), (85.71, 2)]),
    ];
    for (name, row) in rows {
        let reported = row.map(|(v, d)| Reported::new(v, d));
        let found = consistent_matrices(20, reported);
        println!("{name}: {} consistent matri{}", found.len(), if found.len() == 1 { "x" } else { "ces" });
        for cm in found {
            let m = metrics(&cm);
            let f = |v: Option<f64>| v.map_or("undef".to_string(), |v| format!("{v:.2}"));
            println!(
                "  tp {:>2} fp {:>2} fn {:>2} tn {:>2}  ->  {} / {} / {} / {}  ({} lame videos)",
                cm.tp, cm.fp, cm.fn_, cm.tn, f(m.accuracy), f(m.precision), f(m.recall), f(m.f1), cm.tp + cm.fn_
            );
        }
    }
}
