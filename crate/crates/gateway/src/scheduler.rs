// SPDX-License-Identifier: Apache-2.0

//! Periodic store and profile activities, dispatched as the scheduler
//! principal through the same entry point as user commands.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use ecig_core::access::SecretKey;
use ecig_core::cmdparse::ValidatedCommand;
use ecig_core::AssetId;
use thiserror::Error;

use crate::actmgr::{ActivityManager, ActivityResult, Principal};

pub const MIN_INTERVAL: Duration = Duration::from_secs(1);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("interval {0:?} is below the one-second minimum")]
pub struct BadInterval(pub Duration);

#[derive(Debug, Clone)]
pub struct Schedule {
    pub store_interval: Duration,
    pub profile_interval: Duration,
    pub assets: Vec<AssetId>,
    pub key: SecretKey,
}

#[derive(Debug, Default)]
pub struct TickCounters {
    store_ok: AtomicU64,
    store_other: AtomicU64,
    profile_ok: AtomicU64,
    profile_other: AtomicU64,
}

impl TickCounters {
    pub fn store_ok(&self) -> u64 {
        self.store_ok.load(Ordering::SeqCst)
    }
    pub fn store_other(&self) -> u64 {
        self.store_other.load(Ordering::SeqCst)
    }
    pub fn profile_ok(&self) -> u64 {
        self.profile_ok.load(Ordering::SeqCst)
    }
    pub fn profile_other(&self) -> u64 {
        self.profile_other.load(Ordering::SeqCst)
    }
}

type StopSignal = Arc<(Mutex<bool>, Condvar)>;

/// Running scheduler. Stops on drop.
#[derive(Debug)]
pub struct Scheduler {
    stop: StopSignal,
    threads: Vec<JoinHandle<()>>,
    counters: Arc<TickCounters>,
}

impl Scheduler {
    /// Fires both activities immediately, then once per interval.
    pub fn start(am: Arc<ActivityManager>, schedule: Schedule) -> Result<Self, BadInterval> {
        for i in [schedule.store_interval, schedule.profile_interval] {
            if i < MIN_INTERVAL {
                return Err(BadInterval(i));
            }
        }
        let stop: StopSignal = Arc::new((Mutex::new(false), Condvar::new()));
        let counters = Arc::new(TickCounters::default());
        let who = Principal::scheduler();

        let store = {
            let (am, stop, counters, who, s) = (am.clone(), stop.clone(), counters.clone(), who.clone(), schedule.clone());
            spawn("sched-store", s.store_interval, stop, move || {
                for &asset in &s.assets {
                    let cmd = ValidatedCommand::StoreS {
                        key: s.key,
                        asset,
                    };
                    let ok = matches!(am.dispatch(&cmd, &who), ActivityResult::Ok { .. });
                    bump(&counters.store_ok, &counters.store_other, ok);
                }
            })
        };
        let profile = {
            let (stop, counters, s) = (stop.clone(), counters.clone(), schedule);
            spawn("sched-profile", s.profile_interval, stop, move || {
                let cmd = ValidatedCommand::GenThreatProfileS { key: s.key };
                let ok = matches!(am.dispatch(&cmd, &who), ActivityResult::Ok { .. });
                bump(&counters.profile_ok, &counters.profile_other, ok);
            })
        };
        Ok(Self {
            stop,
            threads: vec![store, profile],
            counters,
        })
    }

    pub fn counters(&self) -> &TickCounters {
        &self.counters
    }

    pub fn stop(&mut self) {
        {
            let (flag, cv) = &*self.stop;
            *flag.lock().unwrap_or_else(|e| e.into_inner()) = true;
            cv.notify_all();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Scheduler {
    fn drop(&mut self) {
        self.stop();
    }
}

fn bump(ok: &AtomicU64, other: &AtomicU64, success: bool) {
    if success { ok } else { other }.fetch_add(1, Ordering::SeqCst);
}

fn spawn(name: &str, interval: Duration, stop: StopSignal, mut tick: impl FnMut() + Send + 'static) -> JoinHandle<()> {
    thread::Builder::new()
        .name(name.into())
        .spawn(move || {
            let mut deadline = Instant::now();
            loop {
                {
                    let (flag, cv) = &*stop;
                    let mut stopped = flag.lock().unwrap_or_else(|e| e.into_inner());
                    loop {
                        if *stopped {
                            return;
                        }
                        let now = Instant::now();
                        if now >= deadline {
                            break;
                        }
                        stopped = cv
                            .wait_timeout(stopped, deadline - now)
                            .unwrap_or_else(|e| e.into_inner())
                            .0;
                    }
                }
                tick();
                deadline += interval;
                // A slow tick skips missed slots instead of bursting.
                let now = Instant::now();
                while deadline + interval <= now {
                    deadline += interval;
                }
            }
        })
        .expect("scheduler thread spawns")
}
