//! Published mean DTW scores (with standard errors) per number of training
//! sequences. Columns: RNN, Transformer, then the Transformer with dropout
//! 0.3, 0.1 and 0.01. Kept as metadata next to reproduced rows; never used
//! as a pass/fail target.

use crate::models::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub n_train: usize,
    pub cells: [(f64, f64); 5],
}

pub const POINT: [TableRow; 12] = [
    TableRow { n_train: 1, cells: [(15.4, 3.1), (87.0, 10.9), (98.0, 12.7), (81.5, 12.3), (90.8, 16.9)] },
    TableRow { n_train: 2, cells: [(4.0, 0.8), (113.3, 18.6), (47.2, 11.5), (28.1, 6.1), (70.5, 13.4)] },
    TableRow { n_train: 3, cells: [(4.2, 0.9), (90.7, 22.5), (47.7, 5.7), (22.7, 5.1), (25.2, 5.4)] },
    TableRow { n_train: 4, cells: [(6.5, 1.0), (181.7, 36.8), (66.8, 9.2), (51.4, 8.8), (52.7, 17.9)] },
    TableRow { n_train: 5, cells: [(3.1, 0.3), (164.3, 48.7), (117.7, 21.9), (67.1, 17.4), (39.3, 10.1)] },
    TableRow { n_train: 6, cells: [(2.6, 0.3), (196.9, 70.6), (119.6, 21.9), (32.9, 5.9), (39.2, 12.0)] },
    TableRow { n_train: 7, cells: [(1.9, 0.4), (127.3, 42.7), (101.0, 17.5), (19.6, 3.9), (34.3, 12.0)] },
    TableRow { n_train: 8, cells: [(5.2, 0.8), (52.5, 19.7), (221.5, 16.8), (16.3, 3.0), (14.1, 4.7)] },
    TableRow { n_train: 9, cells: [(1.3, 0.1), (25.0, 12.5), (232.1, 14.5), (22.9, 4.2), (18.2, 7.6)] },
    TableRow { n_train: 10, cells: [(3.4, 0.1), (31.7, 14.3), (232.4, 11.2), (16.7, 1.2), (17.0, 6.9)] },
    TableRow { n_train: 25, cells: [(3.8, 0.1), (15.7, 0.8), (219.3, 5.6), (13.9, 0.5), (3.6, 0.3)] },
    TableRow { n_train: 50, cells: [(5.4, 0.3), (4.3, 0.3), (184.7, 5.8), (9.6, 1.3), (8.4, 0.6)] },
];

pub const CYCLIC: [TableRow; 12] = [
    TableRow { n_train: 1, cells: [(80.8, 8.7), (567.0, 67.0), (443.4, 29.3), (450.9, 33.5), (515.9, 41.3)] },
    TableRow { n_train: 2, cells: [(70.2, 8.5), (534.3, 83.8), (389.1, 42.7), (443.4, 59.9), (377.3, 58.2)] },
    TableRow { n_train: 3, cells: [(76.2, 7.8), (488.2, 88.6), (389.4, 43.0), (266.4, 71.4), (273.1, 69.3)] },
    TableRow { n_train: 4, cells: [(31.2, 4.2), (589.0, 146.6), (380.6, 40.0), (297.3, 80.3), (313.6, 64.4)] },
    TableRow { n_train: 5, cells: [(24.2, 2.4), (581.5, 188.7), (358.2, 50.5), (322.9, 79.6), (203.0, 51.8)] },
    TableRow { n_train: 6, cells: [(28.5, 3.4), (564.3, 199.3), (200.1, 39.2), (269.0, 73.4), (217.0, 71.5)] },
    TableRow { n_train: 7, cells: [(26.5, 3.3), (386.1, 155.8), (187.4, 34.9), (386.1, 155.8), (111.3, 37.2)] },
    TableRow { n_train: 8, cells: [(23.0, 1.5), (124.3, 53.6), (300.8, 36.0), (152.4, 31.4), (69.4, 23.7)] },
    TableRow { n_train: 9, cells: [(27.6, 3.3), (71.4, 33.5), (377.1, 26.1), (249.3, 29.7), (42.8, 13.0)] },
    TableRow { n_train: 10, cells: [(23.7, 2.7), (60.0, 7.6), (237.6, 15.5), (167.8, 27.5), (37.0, 6.7)] },
    TableRow { n_train: 25, cells: [(16.4, 1.2), (33.8, 10.2), (311.1, 25.0), (111.9, 21.9), (36.3, 5.5)] },
    TableRow { n_train: 50, cells: [(19.6, 1.4), (36.4, 2.4), (248.6, 21.1), (86.7, 12.0), (43.2, 4.5)] },
];

/// `(mean, standard error)` for a cell, if the tables list it.
pub fn lookup(attractor: &str, model: ModelKind, dropout: f64, n_train: usize) -> Option<(f64, f64)> {
    let table = match attractor {
        "point" => &POINT,
        "cyclic" => &CYCLIC,
        _ => return None,
    };
    let column = match model {
        ModelKind::Rnn if dropout == 0.0 => 0,
        ModelKind::Rnn => return None,
        ModelKind::Transformer => [0.0, 0.3, 0.1, 0.01].iter().position(|&d| d == dropout)? + 1,
    };
    table.iter().find(|r| r.n_train == n_train).map(|r| r.cells[column])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookups() {
        assert_eq!(lookup("point", ModelKind::Rnn, 0.0, 3), Some((4.2, 0.9)));
        assert_eq!(lookup("point", ModelKind::Transformer, 0.0, 3), Some((90.7, 22.5)));
        assert_eq!(lookup("point", ModelKind::Transformer, 0.01, 25), Some((3.6, 0.3)));
        assert_eq!(lookup("point", ModelKind::Transformer, 0.3, 50), Some((184.7, 5.8)));
        assert_eq!(lookup("cyclic", ModelKind::Rnn, 0.0, 3), Some((76.2, 7.8)));
        assert_eq!(lookup("cyclic", ModelKind::Transformer, 0.0, 3), Some((488.2, 88.6)));
        assert_eq!(lookup("point", ModelKind::Rnn, 0.1, 3), None);
        assert_eq!(lookup("point", ModelKind::Rnn, 0.0, 11), None);
        assert_eq!(lookup("figure-eight", ModelKind::Rnn, 0.0, 1), None);
    }

    #[test]
    fn tables_are_complete() {
        let ns: Vec<usize> = POINT.iter().map(|r| r.n_train).collect();
        assert_eq!(ns, [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 25, 50]);
        assert_eq!(CYCLIC.map(|r| r.n_train), POINT.map(|r| r.n_train));
    }
}
