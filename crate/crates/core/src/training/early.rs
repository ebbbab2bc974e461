/// Early-stopping bookkeeping over periodic development-set evaluations.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopState {
    pub higher_is_better: bool,
    pub patience: usize,
    pub best: Option<f64>,
    pub best_update: usize,
    pub since_best: usize,
}

impl EarlyStopState {
    pub fn new(higher_is_better: bool, patience: usize) -> Self {
        EarlyStopState {
            higher_is_better,
            patience,
            best: None,
            best_update: 0,
            since_best: 0,
        }
    }

    /// Records an evaluation; returns true when it is a strict improvement.
    pub fn observe(&mut self, update: usize, metric: f64) -> bool {
        let better = match self.best {
            None => true,
            Some(b) if self.higher_is_better => metric > b,
            Some(b) => metric < b,
        };
        if better {
            self.best = Some(metric);
            self.best_update = update;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        better
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }
}
