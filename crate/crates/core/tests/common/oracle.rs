//! Straight-line scoring reference, written from the instrument definitions
//! without touching the derivation config or the library scorer.

pub fn oracle(instrument: &str, v: &[i64]) -> Vec<(&'static str, f64)> {
    match instrument {
        "FSS" => {
            let s = v[0] + v[1] + v[2] + v[3] + v[4] + v[5] + v[6] + v[7] + v[8];
            vec![("FSS_SCORE", s as f64 / 9.0)]
        }
        "HADS" => {
            let a = v[0] + v[2] + v[4] + v[6] + v[8] + v[10] + v[12];
            let d = v[1] + v[3] + v[5] + v[7] + v[9] + v[11] + v[13];
            vec![("HADS_A", a as f64), ("HADS_D", d as f64)]
        }
        "BDI2" => {
            let mut s = 0;
            for i in 0..21 {
                s += v[i];
            }
            vec![("BDI2_TOTAL", s as f64)]
        }
        "ESS" => vec![("ESS_TOTAL", (v[0] + v[1] + v[2] + v[3] + v[4] + v[5] + v[6] + v[7]) as f64)],
        "FSMC" => {
            const COG: [usize; 10] = [1, 2, 5, 7, 11, 12, 13, 15, 18, 19];
            const MOT: [usize; 10] = [3, 4, 6, 8, 9, 10, 14, 16, 17, 20];
            let cog: i64 = COG.iter().map(|p| v[p - 1]).sum();
            let mot: i64 = MOT.iter().map(|p| v[p - 1]).sum();
            vec![("FSMC_MOTOR", mot as f64), ("FSMC_COG", cog as f64), ("FSMC_TOTAL", (mot + cog) as f64)]
        }
        "SUS" => {
            let odd = (v[0] - 1) + (v[2] - 1) + (v[4] - 1) + (v[6] - 1) + (v[8] - 1);
            let even = (5 - v[1]) + (5 - v[3]) + (5 - v[5]) + (5 - v[7]) + (5 - v[9]);
            vec![("SUS_SCORE", (odd + even) as f64 * 2.5)]
        }
        "ARAT" => {
            let grasp = v[0] + v[1] + v[2] + v[3] + v[4] + v[5];
            let grip = v[6] + v[7] + v[8] + v[9];
            let pinch = v[10] + v[11] + v[12] + v[13] + v[14] + v[15];
            let gross = v[16] + v[17] + v[18];
            vec![
                ("ARAT_TOTAL", (grasp + grip + pinch + gross) as f64),
                ("ARAT_GRASP", grasp as f64),
                ("ARAT_GRIP", grip as f64),
                ("ARAT_PINCH", pinch as f64),
                ("ARAT_GROSS", gross as f64),
            ]
        }
        other => panic!("no oracle for {other}"),
    }
}

/// (instrument, arity, min, max)
pub const TABLE: [(&str, usize, i64, i64); 7] = [
    ("FSS", 9, 1, 7),
    ("HADS", 14, 0, 3),
    ("BDI2", 21, 0, 3),
    ("ESS", 8, 0, 3),
    ("FSMC", 20, 1, 5),
    ("SUS", 10, 1, 5),
    ("ARAT", 19, 0, 3),
];
