//! Bundled miniature chit-chat corpus.
//!
//! Short tweet-style dialogues grown from a topic lexicon and a handful of
//! turn templates. The generator is deterministic per seed; the bundled file
//! under `data/` is its output for [`BUNDLED_SEED`] and [`BUNDLED_SIZE`].

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dialogue::{read_dialogues, Dialogue, Speaker, System, Utterance};
use crate::error::Result;

pub struct Topic {
    pub name: &'static str,
    pub nouns: &'static [&'static str],
    pub adjectives: &'static [&'static str],
    pub activities: &'static [&'static str],
}

impl Topic {
    pub fn contains(&self, token: &str) -> bool {
        self.nouns.contains(&token)
            || self.adjectives.contains(&token)
            || self.activities.contains(&token)
    }
}

pub const TOPICS: &[Topic] = &[
    Topic {
        name: "food",
        nouns: &["pizza", "pasta", "tacos", "burgers", "sushi", "pancakes", "coffee", "cake", "fries", "noodles"],
        adjectives: &["delicious", "spicy", "tasty", "greasy", "yummy"],
        activities: &["cooking", "eating", "baking", "ordering"],
    },
    Topic {
        name: "music",
        nouns: &["album", "concert", "song", "band", "playlist", "guitar", "gig", "lyrics", "tour", "radio"],
        adjectives: &["catchy", "loud", "brilliant", "awful", "epic"],
        activities: &["listening", "singing", "dancing", "jamming"],
    },
    Topic {
        name: "sports",
        nouns: &["match", "game", "team", "goal", "coach", "season", "football", "tennis", "gym", "race"],
        adjectives: &["intense", "brutal", "close", "insane", "unreal"],
        activities: &["training", "playing", "running", "cheering"],
    },
    Topic {
        name: "weather",
        nouns: &["rain", "snow", "sun", "storm", "wind", "heat", "weather", "clouds", "sky", "frost"],
        adjectives: &["freezing", "sunny", "gloomy", "humid", "lovely"],
        activities: &["shivering", "sweating", "sunbathing", "walking"],
    },
    Topic {
        name: "phone",
        nouns: &["phone", "laptop", "charger", "app", "screen", "battery", "update", "camera", "wifi", "tablet"],
        adjectives: &["broken", "slow", "shiny", "cracked", "glitchy"],
        activities: &["texting", "charging", "scrolling", "updating"],
    },
    Topic {
        name: "movies",
        nouns: &["movie", "film", "trailer", "cinema", "actor", "sequel", "popcorn", "series", "episode", "show"],
        adjectives: &["scary", "funny", "hilarious", "sad", "creepy"],
        activities: &["watching", "streaming", "bingeing", "crying"],
    },
    Topic {
        name: "school",
        nouns: &["exam", "homework", "teacher", "class", "essay", "test", "lecture", "library", "grades", "project"],
        adjectives: &["hard", "stressful", "easy", "long", "pointless"],
        activities: &["studying", "revising", "writing", "reading"],
    },
    Topic {
        name: "travel",
        nouns: &["trip", "flight", "beach", "hotel", "holiday", "train", "airport", "city", "road", "bus"],
        adjectives: &["relaxing", "delayed", "packed", "beautiful", "expensive"],
        activities: &["packing", "flying", "driving", "exploring"],
    },
];

/// Replies that carry no topical content.
pub const GENERIC_REPLIES: &[&str] = &[
    "lol",
    "haha ok",
    "ok thanks xx",
    "i don't know .",
    "yeah",
    "good night xx",
    "lol same",
    "haha",
    "omg",
    "thanks xxx",
];

const NAMES: &[&str] = &["Alice", "Bob", "Jess", "Sam", "Tom", "Mia", "Leo", "Zoe", "Max", "Amy"];
const TAGS: &[&str] = &["Weekend", "Friday", "Mood", "Life", "NoSleep"];

pub const BUNDLED_SEED: u64 = 20_190_801;
pub const BUNDLED_SIZE: usize = 2_400;

const BUNDLED: &str = include_str!("../../data/minicorpus.jsonl");

/// Index of the topic a token belongs to, if any.
pub fn topic_of(token: &str) -> Option<usize> {
    TOPICS.iter().position(|t| t.contains(token))
}

/// The bundled corpus.
pub fn bundled() -> Result<Vec<Dialogue>> {
    read_dialogues(BUNDLED.as_bytes()).collect()
}

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
}

impl Gen<'_> {
    fn pick<'a>(&mut self, xs: &'a [&'a str]) -> &'a str {
        xs.choose(self.rng).expect("non-empty list")
    }

    fn mention(&mut self) -> String {
        format!("@{}", self.pick(NAMES))
    }

    fn two_nouns(&mut self, t: &Topic) -> (&'static str, &'static str) {
        let a = *t.nouns.choose(self.rng).expect("nouns");
        loop {
            let b = *t.nouns.choose(self.rng).expect("nouns");
            if b != a {
                return (a, b);
            }
        }
    }

    fn opener(&mut self, t: &Topic) -> String {
        let m = self.mention();
        let (n, n2) = self.two_nouns(t);
        let adj = self.pick(t.adjectives);
        let act = self.pick(t.activities);
        match self.rng.random_range(0..7) {
            0 => format!("{m} do you like {n} ?"),
            1 => format!("{m} just had the most {adj} {n} ever"),
            2 => format!("{m} what are you up to ? im {act}"),
            3 => format!("{m} ugh the {n} is so {adj} today"),
            4 => format!("#{} {n} and {n2} time !", self.pick(TAGS)),
            5 => format!("{m} have you seen the new {n} ?"),
            _ => format!("{m} so {adj} , cant stop thinking about {n}"),
        }
    }

    fn reply(&mut self, t: &Topic) -> String {
        let m = self.mention();
        let (n, n2) = self.two_nouns(t);
        let adj = self.pick(t.adjectives);
        let act = self.pick(t.activities);
        match self.rng.random_range(0..7) {
            0 => format!("{m} yeah the {n} is {adj} , i love it"),
            1 => format!("{m} no way , {n} is so {adj} lol"),
            2 => format!("{m} haha same , {act} all day"),
            3 => format!("{m} i prefer {n2} tbh"),
            4 => format!("{m} omg yes ! {n} and {n2} forever"),
            5 => format!("{m} not really , {n} is kinda {adj}"),
            _ => format!("{m} im {act} right now haha"),
        }
    }

    fn question(&mut self, t: &Topic) -> String {
        let m = self.mention();
        let n = self.pick(t.nouns);
        let adj = self.pick(t.adjectives);
        match self.rng.random_range(0..3) {
            0 => format!("{m} really ? why is the {n} {adj} ?"),
            1 => format!("{m} wanna get {n} later ?"),
            _ => format!("{m} how was the {n} ?"),
        }
    }

    fn answer(&mut self, t: &Topic) -> String {
        let m = self.mention();
        let n = self.pick(t.nouns);
        let adj = self.pick(t.adjectives);
        match self.rng.random_range(0..3) {
            0 => format!("{m} it was {adj} , the {n} was the best"),
            1 => format!("{m} because the {n} is {adj}"),
            _ => format!("{m} sure , {n} sounds {adj}"),
        }
    }

    fn generic(&mut self) -> String {
        format!("{} {}", self.mention(), self.pick(GENERIC_REPLIES))
    }
}

/// Generates `n` dialogues of 2–6 turns each.
pub fn generate(n: usize, seed: u64) -> Vec<Dialogue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut g = Gen { rng: &mut rng };
        let mut topic = g.rng.random_range(0..TOPICS.len());
        let len = *[2usize, 3, 3, 4, 4, 4, 5, 5, 6].choose(g.rng).expect("lengths");
        let mut speaker = if g.rng.random_bool(0.5) { Speaker::A } else { Speaker::B };
        let mut turns = Vec::with_capacity(len);
        let mut last = g.opener(&TOPICS[topic]);
        turns.push(Utterance::new(speaker, last.clone()));
        for _ in 1..len {
            speaker = speaker.other();
            let asked = last.ends_with('?');
            let r: f64 = g.rng.random();
            let t = &TOPICS[topic];
            let text = if asked {
                if r < 0.8 {
                    g.answer(t)
                } else {
                    g.generic()
                }
            } else if r < 0.45 {
                g.reply(t)
            } else if r < 0.7 {
                g.question(t)
            } else if r < 0.9 {
                g.generic()
            } else {
                topic = g.rng.random_range(0..TOPICS.len());
                g.opener(&TOPICS[topic])
            };
            turns.push(Utterance::new(speaker, text.clone()));
            last = text;
        }
        out.push(Dialogue {
            dialogue_id: format!("mini-{k:05}"),
            origin_system: System::Human,
            seed: turns,
            generated: Vec::new(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dialogue::to_line;

    #[test]
    fn bundled_file_is_the_generator_output() {
        let generated: Vec<String> = generate(BUNDLED_SIZE, BUNDLED_SEED).iter().map(to_line).collect();
        let bundled: Vec<&str> = BUNDLED.lines().collect();
        assert_eq!(bundled.len(), BUNDLED_SIZE);
        assert!(generated.iter().zip(&bundled).all(|(g, b)| g == b));
    }

    #[test]
    fn bundled_corpus_round_trips_byte_identically() {
        let dialogues = bundled().unwrap();
        assert!(dialogues.len() >= 2_000);
        let rewritten: String = dialogues.iter().map(|d| to_line(d) + "\n").collect();
        assert_eq!(rewritten, BUNDLED);
    }

    #[test]
    fn topic_words_are_unique_to_one_topic() {
        for (i, t) in TOPICS.iter().enumerate() {
            for w in t.nouns.iter().chain(t.adjectives).chain(t.activities) {
                assert_eq!(topic_of(w), Some(i), "{w}");
            }
        }
    }
}
