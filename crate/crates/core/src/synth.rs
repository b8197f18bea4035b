//! Deterministic synthetic benchmark corpora.
//!
//! Each article is about one topic and embeds two tweets: one whose text
//! carries the topic words, and one whose text is pure filler but whose
//! creator's bio carries them. Text-only models can solve the first half;
//! the second half is reachable only through creator context, and only
//! through the bio.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ArticleRecord, CreatorProfile, Tweet, SECONDS_PER_DAY};
use crate::error::Result;
use crate::textprep::{UnigramDictionary, Vocabulary, PADDING_TOKEN, UNKNOWN_TOKEN};

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub articles: usize,
    pub tweets: usize,
    pub creators: usize,
    pub topics: usize,
    pub seed: u64,
    /// Publication time of the first article, UTC seconds.
    pub base_time: i64,
    /// Emit raw_html with embed markup instead of declared embed ids.
    pub with_html: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            articles: 500,
            tweets: 2000,
            creators: 200,
            topics: 40,
            seed: 7,
            base_time: 1_600_000_000,
            with_html: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub articles: Vec<ArticleRecord>,
    pub tweets: Vec<Tweet>,
    pub creators: Vec<CreatorProfile>,
    pub vocab_lines: Vec<String>,
    pub dict_lines: Vec<String>,
}

impl SynthCorpus {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.vocab_lines.clone())
    }

    pub fn dictionary(&self) -> Result<UnigramDictionary> {
        UnigramDictionary::from_tsv(self.dict_lines.iter().cloned())
    }
}

const SYLLABLES: [&str; 40] = [
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "ka", "ke", "ki", "ko", "ku", "la",
    "le", "li", "lo", "lu", "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu", "ra", "re",
    "ri", "ro", "ru", "ta", "te", "ti", "to", "tu",
];

fn make_word(rng: &mut ChaCha8Rng, taken: &mut HashSet<String>) -> String {
    loop {
        let len = rng.gen_range(3..=4);
        let word: String = (0..len).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        if taken.insert(word.clone()) {
            return word;
        }
    }
}

fn article_time(config: &SynthConfig, index: usize) -> i64 {
    config.base_time + index as i64 * 3600
}

fn embed_html(tweet: &Tweet, handle: &str) -> String {
    format!(
        "<blockquote class=\"twitter-tweet\"><p>{}</p>\
         <a href=\"https://twitter.com/{}/status/{}\">link</a></blockquote>",
        tweet.text, handle, tweet.tweet_id
    )
}

/// Generates the benchmark corpus. Deterministic for a fixed config.
pub fn generate(config: &SynthConfig) -> SynthCorpus {
    assert!(config.topics >= 2, "need at least two topics");
    assert!(
        config.creators >= config.topics,
        "need at least one creator per topic"
    );
    assert!(
        config.tweets >= 2 * config.articles,
        "each article embeds two tweets"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut taken = HashSet::new();

    let topic_words: Vec<Vec<String>> = (0..config.topics)
        .map(|_| (0..5).map(|_| make_word(&mut rng, &mut taken)).collect())
        .collect();
    let filler: Vec<String> = (0..100).map(|_| make_word(&mut rng, &mut taken)).collect();
    let pick_filler = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
        (0..n)
            .map(|_| filler.choose(rng).unwrap().clone())
            .collect()
    };

    // Creators: topic assigned round-robin; only the bio carries topic
    // words, and it carries them densely so creator context is the decisive
    // channel for the filler-text positives. The other attributes are short
    // and only partially covered, like real profile metadata.
    let mut rng_bio = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(3));
    let creators: Vec<CreatorProfile> = (0..config.creators)
        .map(|i| {
            let words = &topic_words[i % config.topics];
            let mut bio_words = Vec::new();
            for _ in 0..12 {
                bio_words.push(words[rng_bio.gen_range(0..5)].clone());
            }
            const HANDLE_POOL: [&str; 6] = ["press", "daily", "wire", "desk", "post", "scoop"];
            CreatorProfile {
                creator_id: format!("c{i:04}"),
                screen_handle: Some(HANDLE_POOL[i % HANDLE_POOL.len()].to_string()),
                display_name: rng_bio.gen_bool(0.4).then(|| "Reporter".to_string()),
                bio: Some(bio_words.join(" ")),
                website: rng_bio.gen_bool(0.3).then(|| "example.site".to_string()),
                location: rng_bio.gen_bool(0.3).then(|| "metro".to_string()),
                snapshot_at: config.base_time,
            }
        })
        .collect();
    let creators_per_topic = config.creators / config.topics;
    let creator_for_topic = |topic: usize, salt: usize| -> usize {
        topic + config.topics * (salt % creators_per_topic)
    };

    let mut tweets: Vec<Tweet> = Vec::with_capacity(config.tweets);
    let mut embeds: Vec<(String, String)> = Vec::with_capacity(config.articles);

    for a in 0..config.articles {
        let topic = a % config.topics;
        let words = &topic_words[topic];
        let published = article_time(config, a);

        // Textual positive: the tweet itself names the topic.
        let mut text_parts = vec![
            words[rng.gen_range(0..5)].clone(),
            words[rng.gen_range(0..5)].clone(),
            words[4].clone(),
            words[rng.gen_range(0..5)].clone(),
        ];
        text_parts.extend(pick_filler(&mut rng, 1));
        if rng.gen_bool(0.3) {
            text_parts.push(format!("#{}{}", words[0], words[1]));
        }
        let textual = Tweet {
            tweet_id: format!("1{a:04}"),
            text: text_parts.join(" "),
            created_at: published - rng.gen_range(1..=6) * SECONDS_PER_DAY,
            creator_id: creators[creator_for_topic(topic, a)].creator_id.clone(),
        };

        // Vague positive: filler text; the topic lives in the creator's bio.
        let vague = Tweet {
            tweet_id: format!("2{a:04}"),
            text: {
                let n = rng.gen_range(4..=6);
                pick_filler(&mut rng, n).join(" ")
            },
            created_at: published - rng.gen_range(1..=6) * SECONDS_PER_DAY,
            creator_id: creators[creator_for_topic(topic, a + 1)].creator_id.clone(),
        };

        embeds.push((textual.tweet_id.clone(), vague.tweet_id.clone()));
        tweets.push(textual);
        tweets.push(vague);
    }

    let span = config.articles.max(1) as i64 * 3600;
    for i in 0..config.tweets - 2 * config.articles {
        let created =
            config.base_time - rng.gen_range(0..7 * SECONDS_PER_DAY) + rng.gen_range(0..=span);
        let creator = creators.choose(&mut rng).unwrap().creator_id.clone();
        let text = if i % 2 == 0 {
            let words = &topic_words[rng.gen_range(0..config.topics)];
            let mut parts = vec![
                words[rng.gen_range(0..5)].clone(),
                words[rng.gen_range(0..5)].clone(),
                words[rng.gen_range(0..5)].clone(),
            ];
            parts.extend(pick_filler(&mut rng, 2));
            parts.join(" ")
        } else {
            let n = rng.gen_range(4..=6);
            pick_filler(&mut rng, n).join(" ")
        };
        tweets.push(Tweet {
            tweet_id: format!("3{i:05}"),
            text,
            created_at: created,
            creator_id: creator,
        });
    }

    let tweet_text = |id: &str| -> &str { &tweets.iter().find(|t| t.tweet_id == id).unwrap().text };
    let handle_of = |id: &str| -> String {
        let creator_id = &tweets.iter().find(|t| t.tweet_id == id).unwrap().creator_id;
        creators
            .iter()
            .find(|c| &c.creator_id == creator_id)
            .and_then(|c| c.screen_handle.clone())
            .unwrap_or_default()
    };

    let mut rng_body = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let articles: Vec<ArticleRecord> = (0..config.articles)
        .map(|a| {
            let topic = a % config.topics;
            let words = &topic_words[topic];
            let (textual_id, vague_id) = &embeds[a];
            let title = format!(
                "{} {} {} {}",
                words[0],
                words[1],
                words[2],
                filler.choose(&mut rng_body).unwrap()
            );
            let mut body_words: Vec<String> = Vec::new();
            for _ in 0..4 {
                body_words.push(words[rng_body.gen_range(0..5)].clone());
                body_words.push(words[rng_body.gen_range(0..5)].clone());
                body_words.extend(pick_filler(&mut rng_body, 1));
            }
            let body = format!(
                "{} {} later {} {} report",
                body_words[..6].join(" "),
                tweet_text(textual_id),
                tweet_text(vague_id),
                body_words[6..].join(" "),
            );
            let (embedded_tweet_ids, raw_html) = if config.with_html {
                let tw_a = tweets.iter().find(|t| &t.tweet_id == textual_id).unwrap();
                let tw_b = tweets.iter().find(|t| &t.tweet_id == vague_id).unwrap();
                let html = format!(
                    "<html><body><p>{}</p>{}{}<p>{}</p></body></html>",
                    body_words[..6].join(" "),
                    embed_html(tw_a, &handle_of(textual_id)),
                    embed_html(tw_b, &handle_of(vague_id)),
                    body_words[6..].join(" "),
                );
                (Vec::new(), Some(html))
            } else {
                (vec![textual_id.clone(), vague_id.clone()], None)
            };
            ArticleRecord {
                article_id: format!("a{a:04}"),
                title,
                body,
                published_at: article_time(config, a),
                embedded_tweet_ids,
                raw_html,
            }
        })
        .collect();

    // Vocabulary covers the generated word banks plus the context framing
    // tokens; handles and digits stay out-of-vocabulary on purpose.
    let mut vocab_lines = vec![PADDING_TOKEN.to_string(), UNKNOWN_TOKEN.to_string()];
    for words in &topic_words {
        vocab_lines.extend(words.iter().cloned());
    }
    vocab_lines.extend(filler.iter().cloned());
    vocab_lines.extend(
        [
            "covers",
            "later",
            "report",
            "press",
            "daily",
            "wire",
            "desk",
            "post",
            "scoop",
            "Reporter",
            "example.site",
            "metro",
            "screen:",
            "display:",
            "bio:",
            "website:",
            "location:",
        ]
        .map(String::from),
    );

    let mut rng_dict = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut dict_lines: Vec<String> = Vec::new();
    for words in &topic_words {
        for word in words {
            dict_lines.push(format!("{word}\t{}", rng_dict.gen_range(5..=60)));
        }
    }
    for word in &filler {
        dict_lines.push(format!("{word}\t{}", rng_dict.gen_range(5..=60)));
    }

    SynthCorpus {
        articles,
        tweets,
        creators,
        vocab_lines,
        dict_lines,
    }
}

/// Writes the corpus as the five pipeline input files.
pub fn write_fixture(dir: &Path, corpus: &SynthCorpus) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut articles = std::fs::File::create(dir.join("articles.jsonl"))?;
    crate::corpus::write_jsonl(&mut articles, &corpus.articles)?;
    let mut tweets = std::fs::File::create(dir.join("tweets.jsonl"))?;
    crate::corpus::write_jsonl(&mut tweets, &corpus.tweets)?;
    let mut creators = std::fs::File::create(dir.join("creators.jsonl"))?;
    crate::corpus::write_jsonl(&mut creators, &corpus.creators)?;
    std::fs::write(dir.join("vocab.txt"), corpus.vocab_lines.join("\n"))?;
    let mut dict = std::fs::File::create(dir.join("unigrams.tsv"))?;
    for line in &corpus.dict_lines {
        writeln!(dict, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{extract_embedded_tweet_ids, Corpus};

    fn small_config() -> SynthConfig {
        SynthConfig {
            articles: 20,
            tweets: 60,
            creators: 10,
            topics: 5,
            seed: 3,
            base_time: 1_600_000_000,
            with_html: false,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_config());
        let b = generate(&small_config());
        assert_eq!(a.vocab_lines, b.vocab_lines);
        assert_eq!(
            a.tweets.iter().map(|t| &t.text).collect::<Vec<_>>(),
            b.tweets.iter().map(|t| &t.text).collect::<Vec<_>>()
        );
    }

    #[test]
    fn corpus_validates_and_mines_two_pairs_per_article() {
        let synth = generate(&small_config());
        let articles: Vec<_> = synth
            .articles
            .iter()
            .cloned()
            .map(|r| r.into_article().unwrap())
            .collect();
        let corpus = Corpus::new(articles, synth.tweets.clone(), synth.creators.clone()).unwrap();
        let pairs = corpus.mine_pairs();
        assert_eq!(pairs.len(), 2 * 20);
    }

    #[test]
    fn html_mode_embeds_are_minable() {
        let mut config = small_config();
        config.with_html = true;
        let synth = generate(&config);
        for record in &synth.articles {
            let html = record.raw_html.as_ref().unwrap();
            let ids = extract_embedded_tweet_ids(html);
            assert_eq!(ids.len(), 2, "article {}", record.article_id);
            assert!(ids[0].starts_with('1'));
            assert!(ids[1].starts_with('2'));
        }
    }

    #[test]
    fn positives_fall_in_candidate_window() {
        let synth = generate(&small_config());
        for (a, record) in synth.articles.iter().enumerate() {
            for id in &record.embedded_tweet_ids {
                let tweet = synth.tweets.iter().find(|t| &t.tweet_id == id).unwrap();
                assert!(tweet.created_at < record.published_at, "article {a}");
                assert!(tweet.created_at >= record.published_at - 7 * SECONDS_PER_DAY);
            }
        }
    }

    #[test]
    fn vocab_and_dict_parse() {
        let synth = generate(&small_config());
        let vocab = synth.vocabulary().unwrap();
        assert!(vocab.len() > 40);
        let dict = synth.dictionary().unwrap();
        assert!(dict.total() > 0);
    }
}
