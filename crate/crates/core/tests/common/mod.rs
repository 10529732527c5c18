#![allow(dead_code)]

use std::path::Path;

use chrono::{TimeZone, Utc};
use viralbert::corpus::{write_tweet_records, TweetRecord};

pub fn tweet(id: &str, text: &str, followers: u64, retweets: u64) -> TweetRecord {
    TweetRecord {
        id: id.to_string(),
        text: text.to_string(),
        created_at: Utc.with_ymd_and_hms(2021, 10, 4, 9, 30, 0).unwrap(),
        source_client: "Twitter for Android".into(),
        hashtag_count: 0,
        mention_count: 0,
        followers,
        following: 120,
        verified: false,
        retweet_count: retweets,
        like_count: 0,
        reply_count: 0,
        quote_count: 0,
        topic: "Sports".into(),
        lang: Some("en".into()),
        is_retweet: Some(false),
    }
}

/// A retweet count inside the band of `class`.
pub fn retweets_for(class: usize, salt: u64) -> u64 {
    match class {
        0 => 0,
        1 => 1,
        2 => 2 + salt % 19,
        _ => 21 + salt % 400,
    }
}

pub fn write_corpus(path: &Path, records: &[TweetRecord]) {
    write_tweet_records(path, records).unwrap();
}

/// Small mixed corpus: every band present, a few topics, hashtags and mentions in the text.
pub fn mixed_corpus(n: usize) -> Vec<TweetRecord> {
    let topics = ["Sports", "Politics", "Pets", "Music"];
    (0..n)
        .map(|i| {
            let class = i % 4;
            let mut r = tweet(
                &format!("t{i:04}"),
                &format!("match day {i} #goal @club great play number {}", i * 7 % 13),
                100 + 37 * i as u64,
                retweets_for(class, i as u64 * 31),
            );
            r.topic = topics[i % topics.len()].into();
            r.verified = i % 5 == 0;
            r
        })
        .collect()
}
