//! Wall-clock access with second resolution, injectable for tests.

use std::fmt;
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A UTC instant truncated to whole seconds, rendered as RFC 3339 text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn from_datetime(at: DateTime<Utc>) -> Self {
        Timestamp(Utc.timestamp_opt(at.timestamp(), 0).single().unwrap_or(at))
    }

    pub fn from_unix(secs: i64) -> Self {
        Timestamp(
            Utc.timestamp_opt(secs, 0)
                .single()
                .expect("timestamp in range"),
        )
    }

    pub fn parse(text: &str) -> Option<Self> {
        DateTime::parse_from_rfc3339(text)
            .ok()
            .map(|t| Timestamp::from_datetime(t.with_timezone(&Utc)))
    }

    pub fn as_datetime(&self) -> DateTime<Utc> {
        self.0
    }

    pub fn unix(&self) -> i64 {
        self.0.timestamp()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_rfc3339_opts(SecondsFormat::Secs, true))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Timestamp::parse(&text)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid RFC 3339 timestamp `{text}`")))
    }
}

/// Source of time. Retry backoff sleeps through the clock so tests can run
/// instantly.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_datetime(Utc::now())
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration)
    }
}

/// A clock that only moves when told to. `sleep` advances it and records the
/// requested duration.
#[derive(Debug)]
pub struct ManualClock {
    now: Mutex<i64>,
    sleeps: Mutex<Vec<Duration>>,
}

impl ManualClock {
    pub fn starting_at(unix_secs: i64) -> Self {
        ManualClock {
            now: Mutex::new(unix_secs),
            sleeps: Mutex::new(Vec::new()),
        }
    }

    pub fn advance(&self, secs: i64) {
        *self.now.lock().unwrap() += secs;
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.sleeps.lock().unwrap().clone()
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        // 2023-01-01T00:00:00Z
        ManualClock::starting_at(1_672_531_200)
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_unix(*self.now.lock().unwrap())
    }

    fn sleep(&self, duration: Duration) {
        self.sleeps.lock().unwrap().push(duration);
        let secs = duration.as_secs() as i64;
        self.advance(secs.max(0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_whole_seconds_in_utc() {
        let ts = Timestamp::parse("2021-03-04T05:06:07.891+02:00").unwrap();
        assert_eq!(ts.to_string(), "2021-03-04T03:06:07Z");
        let json = serde_json::to_string(&ts).unwrap();
        assert_eq!(json, "\"2021-03-04T03:06:07Z\"");
        assert_eq!(serde_json::from_str::<Timestamp>(&json).unwrap(), ts);
    }

    #[test]
    fn manual_clock_sleep_advances() {
        let clock = ManualClock::starting_at(0);
        clock.sleep(Duration::from_secs(2));
        assert_eq!(clock.now().unix(), 2);
        assert_eq!(clock.sleeps(), vec![Duration::from_secs(2)]);
    }
}
