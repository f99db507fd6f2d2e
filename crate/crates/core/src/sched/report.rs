//! Flat metric log produced by every trainer.

/// Stage 0 marks run-level quantities; stages are otherwise 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: u64,
    pub stage: usize,
    pub metric: String,
    pub value: f64,
}

pub mod metric {
    pub const LOSS: &str = "train_loss";
    pub const LR: &str = "lr";
    /// Mean local loss over one pass worth of updates.
    pub const EPOCH_LOSS: &str = "epoch_loss";
    pub const TEST_ACC: &str = "test_acc";
    pub const UPDATES: &str = "updates";
    pub const TICKS: &str = "ticks";
    pub const STALLS: &str = "stalls";
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<MetricRecord>,
    /// Simulation ticks (asynchronous trainer only).
    pub ticks: u64,
    pub stalls: u64,
    /// Final update count per stage.
    pub updates: Vec<u64>,
}

impl TrainReport {
    pub fn push(&mut self, step: u64, epoch: u64, stage: usize, metric: &str, value: f64) {
        self.records.push(MetricRecord {
            step,
            epoch,
            stage,
            metric: metric.to_string(),
            value,
        });
    }

    pub fn series<'a>(&'a self, stage: usize, metric: &'a str) -> impl Iterator<Item = &'a MetricRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.stage == stage && r.metric == metric)
    }

    pub fn values(&self, stage: usize, metric: &str) -> Vec<f64> {
        self.series(stage, metric).map(|r| r.value).collect()
    }

    pub fn last(&self, stage: usize, metric: &str) -> Option<f64> {
        self.series(stage, metric).last().map(|r| r.value)
    }

    pub fn stages(&self) -> usize {
        self.updates.len()
    }

    /// Last recorded test accuracy of each stage head.
    pub fn final_test_acc(&self) -> Vec<Option<f64>> {
        (1..=self.stages()).map(|s| self.last(s, metric::TEST_ACC)).collect()
    }

    /// Last full-pass mean loss of each stage.
    pub fn final_epoch_loss(&self) -> Vec<Option<f64>> {
        (1..=self.stages()).map(|s| self.last(s, metric::EPOCH_LOSS)).collect()
    }
}
