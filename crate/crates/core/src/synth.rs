//! Synthetic typed tables for smoke tests, benchmarks and desk-scale training.
//!
//! Every column is drawn from one of five generators (dates, integers,
//! prices, person names, country names). Values within a column share a
//! style (a year, a magnitude, a currency, a naming origin, a region) so
//! that an out-of-place cell is recognisable from its column alone. Sorted
//! columns are regular progressions. Tables follow themes whose first-column
//! header identifies the remaining headers.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Table;
use crate::error::{Error, Result};
use crate::util::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Date,
    Integer,
    Price,
    Name,
    Country,
}

impl ColumnType {
    pub const ALL: [ColumnType; 5] = [
        ColumnType::Date,
        ColumnType::Integer,
        ColumnType::Price,
        ColumnType::Name,
        ColumnType::Country,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Date => "date",
            ColumnType::Integer => "integer",
            ColumnType::Price => "price",
            ColumnType::Name => "name",
            ColumnType::Country => "country",
        }
    }

    fn numeric(self) -> bool {
        matches!(self, ColumnType::Date | ColumnType::Integer | ColumnType::Price)
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ColumnType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ColumnType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown column type `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub min_rows: usize,
    pub max_rows: usize,
    pub min_cols: usize,
    pub max_cols: usize,
    /// Probability that a numeric column is sorted ascending.
    pub sorted_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            min_rows: 5,
            max_rows: 10,
            min_cols: 3,
            max_cols: 5,
            sorted_fraction: 0.0,
            seed: 0,
        }
    }
}

/// A generated table with the generator behind each column.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTable {
    pub table: Table,
    pub types: Vec<ColumnType>,
    pub sorted: Vec<bool>,
    pub theme: &'static str,
}

struct Theme {
    key: &'static str,
    key_type: ColumnType,
    columns: &'static [(&'static str, ColumnType)],
}

const THEMES: &[Theme] = &[
    Theme {
        key: "athlete",
        key_type: ColumnType::Name,
        columns: &[
            ("nation", ColumnType::Country),
            ("born", ColumnType::Date),
            ("points", ColumnType::Integer),
            ("prize money", ColumnType::Price),
            ("debut", ColumnType::Date),
        ],
    },
    Theme {
        key: "author",
        key_type: ColumnType::Name,
        columns: &[
            ("published", ColumnType::Date),
            ("copies sold", ColumnType::Integer),
            ("advance", ColumnType::Price),
            ("birthplace", ColumnType::Country),
            ("pages", ColumnType::Integer),
        ],
    },
    Theme {
        key: "employee",
        key_type: ColumnType::Name,
        columns: &[
            ("hired", ColumnType::Date),
            ("salary", ColumnType::Price),
            ("office", ColumnType::Country),
            ("badge", ColumnType::Integer),
            ("manager", ColumnType::Name),
        ],
    },
    Theme {
        key: "candidate",
        key_type: ColumnType::Name,
        columns: &[
            ("votes", ColumnType::Integer),
            ("election date", ColumnType::Date),
            ("campaign budget", ColumnType::Price),
            ("running mate", ColumnType::Name),
            ("district", ColumnType::Integer),
        ],
    },
    Theme {
        key: "country",
        key_type: ColumnType::Country,
        columns: &[
            ("population", ColumnType::Integer),
            ("gdp per capita", ColumnType::Price),
            ("independence", ColumnType::Date),
            ("leader", ColumnType::Name),
            ("area", ColumnType::Integer),
        ],
    },
    Theme {
        key: "host nation",
        key_type: ColumnType::Country,
        columns: &[
            ("opening", ColumnType::Date),
            ("attendance", ColumnType::Integer),
            ("ticket price", ColumnType::Price),
            ("organizer", ColumnType::Name),
            ("runner-up", ColumnType::Country),
        ],
    },
    Theme {
        key: "destination",
        key_type: ColumnType::Country,
        columns: &[
            ("departure", ColumnType::Date),
            ("fare", ColumnType::Price),
            ("travellers", ColumnType::Integer),
            ("guide", ColumnType::Name),
            ("return", ColumnType::Date),
        ],
    },
    Theme {
        key: "exporter",
        key_type: ColumnType::Country,
        columns: &[
            ("tonnes", ColumnType::Integer),
            ("unit price", ColumnType::Price),
            ("importer", ColumnType::Country),
            ("contract date", ColumnType::Date),
            ("trade envoy", ColumnType::Name),
        ],
    },
];

const FIRST_NAMES: &[&[&str]] = &[
    &[
        "James", "Mary", "Robert", "Linda", "Michael", "Susan", "William", "Karen", "David", "Emily", "Thomas", "Sarah",
    ],
    &[
        "Carlos",
        "Lucia",
        "Javier",
        "Carmen",
        "Alejandro",
        "Isabel",
        "Diego",
        "Elena",
        "Pablo",
        "Sofia",
        "Miguel",
        "Rosa",
    ],
    &[
        "Hans", "Greta", "Klaus", "Ursula", "Jurgen", "Heike", "Wolfgang", "Annika", "Dieter", "Katrin", "Stefan",
        "Birgit",
    ],
    &[
        "Hiroshi", "Yuki", "Takeshi", "Sakura", "Kenji", "Aiko", "Haruto", "Mei", "Daichi", "Hana", "Ren", "Nanami",
    ],
    &[
        "Giuseppe",
        "Francesca",
        "Marco",
        "Giulia",
        "Alessandro",
        "Chiara",
        "Luca",
        "Valentina",
        "Matteo",
        "Paola",
        "Enzo",
        "Serena",
    ],
    &[
        "Olusegun", "Amara", "Chidi", "Ngozi", "Kwame", "Abena", "Tunde", "Zainab", "Emeka", "Adaeze", "Kofi", "Efua",
    ],
    &[
        "Omar", "Layla", "Karim", "Nadia", "Tariq", "Yasmin", "Hassan", "Rania", "Samir", "Leila", "Faisal", "Huda",
    ],
];

const LAST_NAMES: &[&[&str]] = &[
    &[
        "Smith", "Johnson", "Brown", "Taylor", "Wilson", "Davies", "Evans", "Walker", "Wright", "Hughes", "Clarke",
        "Turner",
    ],
    &[
        "Garcia",
        "Martinez",
        "Lopez",
        "Fernandez",
        "Gonzalez",
        "Rodriguez",
        "Sanchez",
        "Ramirez",
        "Torres",
        "Navarro",
        "Ortega",
        "Vega",
    ],
    &[
        "Muller",
        "Schmidt",
        "Schneider",
        "Fischer",
        "Weber",
        "Wagner",
        "Becker",
        "Hoffmann",
        "Schulz",
        "Koch",
        "Richter",
        "Wolf",
    ],
    &[
        "Tanaka",
        "Suzuki",
        "Takahashi",
        "Watanabe",
        "Ito",
        "Yamamoto",
        "Nakamura",
        "Kobayashi",
        "Kato",
        "Yoshida",
        "Yamada",
        "Sasaki",
    ],
    &[
        "Rossi", "Russo", "Ferrari", "Esposito", "Bianchi", "Romano", "Colombo", "Ricci", "Marino", "Greco", "Bruno",
        "Gallo",
    ],
    &[
        "Okafor", "Adeyemi", "Mensah", "Owusu", "Nwosu", "Balogun", "Asante", "Okonkwo", "Boateng", "Eze", "Appiah",
        "Obi",
    ],
    &[
        "Haddad", "Khalil", "Mansour", "Nasser", "Saleh", "Farouk", "Aziz", "Rahman", "Hamdan", "Qasim", "Sabri",
        "Darwish",
    ],
];

const REGIONS: &[&[&str]] = &[
    &[
        "France",
        "Germany",
        "Italy",
        "Spain",
        "Portugal",
        "Austria",
        "Belgium",
        "Netherlands",
        "Sweden",
        "Norway",
        "Denmark",
        "Poland",
        "Ireland",
        "Finland",
    ],
    &[
        "Japan",
        "China",
        "India",
        "Vietnam",
        "Thailand",
        "Indonesia",
        "Malaysia",
        "Philippines",
        "Nepal",
        "Mongolia",
        "Cambodia",
        "Laos",
        "Bangladesh",
        "Sri Lanka",
    ],
    &[
        "Nigeria", "Kenya", "Ghana", "Ethiopia", "Senegal", "Uganda", "Tanzania", "Zambia", "Angola", "Mali",
        "Cameroon", "Rwanda", "Botswana", "Namibia",
    ],
    &[
        "Brazil",
        "Argentina",
        "Chile",
        "Peru",
        "Colombia",
        "Uruguay",
        "Paraguay",
        "Bolivia",
        "Ecuador",
        "Venezuela",
        "Guyana",
        "Suriname",
        "Panama",
        "Honduras",
    ],
    &[
        "Egypt", "Jordan", "Lebanon", "Oman", "Qatar", "Kuwait", "Bahrain", "Iraq", "Iran", "Syria", "Yemen",
        "Morocco", "Tunisia", "Algeria",
    ],
];

const MONTHS: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

const CURRENCIES: [&str; 4] = ["$", "€", "£", "¥"];

/// Label inventory for column-population tasks: every non-key header.
pub fn header_labels() -> Vec<String> {
    let mut v: Vec<String> = THEMES
        .iter()
        .flat_map(|t| t.columns.iter().map(|(h, _)| h.to_string()))
        .collect();
    v.sort();
    v.dedup();
    v
}

fn date_string(year: i32, month: u32, day: u32, style: u8) -> String {
    match style {
        0 => format!("{year:04}-{month:02}-{day:02}"),
        1 => format!("{day:02}/{month:02}/{year:04}"),
        _ => format!("{} {day}, {year}", MONTHS[month as usize - 1]),
    }
}

fn gen_column<R: Rng + ?Sized>(ty: ColumnType, rows: usize, sorted: bool, date_style: u8, rng: &mut R) -> Vec<String> {
    match ty {
        ColumnType::Date => {
            let year = rng.random_range(1900..2010);
            let month = rng.random_range(1..=12);
            if sorted {
                let step = rng.random_range(1..=4);
                let day = rng.random_range(1..=28);
                (0..rows)
                    .map(|i| date_string(year + step * i as i32, month, day, date_style))
                    .collect()
            } else {
                (0..rows)
                    .map(|_| date_string(year, month, rng.random_range(1..=28), date_style))
                    .collect()
            }
        }
        ColumnType::Integer => {
            let digits = rng.random_range(2..=6u32);
            let unit = 10u64.pow(digits - 1);
            if sorted {
                let start = rng.random_range(1..10u64) * unit;
                let step = rng.random_range(1..=(unit / 10).max(1));
                (0..rows as u64).map(|i| (start + step * i).to_string()).collect()
            } else {
                let lead = rng.random_range(1..10u64);
                (0..rows)
                    .map(|_| (lead * unit + rng.random_range(0..unit.max(1))).to_string())
                    .collect()
            }
        }
        ColumnType::Price => {
            let cur = *CURRENCIES.choose(rng).expect("non-empty");
            let magnitude = rng.random_range(0..4u32);
            let unit = 10f64.powi(magnitude as i32);
            if sorted {
                let start = rng.random_range(1..5u32) as f64 * unit;
                let step = rng.random_range(1..=20u32) as f64 * unit / 20.0;
                (0..rows)
                    .map(|i| format!("{cur}{:.2}", start + step * i as f64))
                    .collect()
            } else {
                (0..rows)
                    .map(|_| {
                        format!(
                            "{cur}{:.2}",
                            (rng.random_range(1.0..10.0) * unit * 100.0).round() / 100.0
                        )
                    })
                    .collect()
            }
        }
        ColumnType::Name => {
            let origin = rng.random_range(0..FIRST_NAMES.len());
            (0..rows)
                .map(|_| {
                    format!(
                        "{} {}",
                        FIRST_NAMES[origin].choose(rng).expect("non-empty"),
                        LAST_NAMES[origin].choose(rng).expect("non-empty")
                    )
                })
                .collect()
        }
        ColumnType::Country => {
            let region = REGIONS.choose(rng).expect("non-empty");
            let mut pool: Vec<&str> = region.to_vec();
            pool.shuffle(rng);
            (0..rows).map(|i| pool[i % pool.len()].to_owned()).collect()
        }
    }
}

/// Generates one themed table from `rng`.
pub fn generate_table<R: Rng + ?Sized>(id: impl Into<String>, cfg: &SynthConfig, rng: &mut R) -> SynthTable {
    let theme = THEMES.choose(rng).expect("non-empty");
    let rows = rng.random_range(cfg.min_rows..=cfg.max_rows);
    let cols = rng
        .random_range(cfg.min_cols..=cfg.max_cols)
        .min(theme.columns.len() + 1);
    let mut picked: Vec<(&str, ColumnType)> = theme.columns.to_vec();
    picked.shuffle(rng);
    picked.truncate(cols - 1);
    picked.insert(0, (theme.key, theme.key_type));
    let date_style = rng.random_range(0..3u8);
    let mut header = Vec::with_capacity(cols);
    let mut types = Vec::with_capacity(cols);
    let mut sorted = Vec::with_capacity(cols);
    let mut columns = Vec::with_capacity(cols);
    for (h, ty) in picked {
        let s = ty.numeric() && rng.random_bool(cfg.sorted_fraction);
        columns.push(gen_column(ty, rows, s, date_style, rng));
        header.push(h.to_owned());
        types.push(ty);
        sorted.push(s);
    }
    let body = (0..rows)
        .map(|i| columns.iter().map(|c| c[i].clone()).collect())
        .collect();
    SynthTable {
        table: Table {
            id: id.into(),
            header: Some(header),
            rows: body,
        },
        types,
        sorted,
        theme: theme.key,
    }
}

/// `n` tables named `{prefix}{index}`; table `i` depends only on the seed and `i`.
pub fn generate_corpus(prefix: &str, n: usize, cfg: &SynthConfig) -> Result<Vec<SynthTable>> {
    if cfg.min_rows == 0 || cfg.min_cols < 2 || cfg.min_rows > cfg.max_rows || cfg.min_cols > cfg.max_cols {
        return Err(Error::Config("invalid synthetic table size range".into()));
    }
    if !(0.0..=1.0).contains(&cfg.sorted_fraction) {
        return Err(Error::Config("sorted_fraction must lie in [0, 1]".into()));
    }
    Ok((0..n)
        .map(|i| {
            let mut rng = derived_rng(cfg.seed, &[b"synth", prefix.as_bytes(), &(i as u64).to_le_bytes()]);
            generate_table(format!("{prefix}{i}"), cfg, &mut rng)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_are_valid_and_deterministic() {
        let cfg = SynthConfig {
            sorted_fraction: 0.5,
            ..SynthConfig::default()
        };
        let a = generate_corpus("t", 50, &cfg).unwrap();
        let b = generate_corpus("t", 50, &cfg).unwrap();
        assert_eq!(a, b);
        for s in &a {
            s.table.validate().unwrap();
            assert_eq!(s.types.len(), s.table.num_cols());
            assert!((5..=10).contains(&s.table.num_rows()));
            assert!((3..=5).contains(&s.table.num_cols()));
        }
        assert!(a.iter().any(|s| s.sorted.iter().any(|&x| x)));
    }

    #[test]
    fn sorted_columns_are_progressions() {
        let cfg = SynthConfig {
            sorted_fraction: 1.0,
            ..SynthConfig::default()
        };
        for s in generate_corpus("s", 40, &cfg).unwrap() {
            for (j, ty) in s.types.iter().enumerate() {
                if *ty == ColumnType::Integer {
                    let v: Vec<u64> = s.table.rows.iter().map(|r| r[j].parse().unwrap()).collect();
                    assert!(v.windows(2).all(|w| w[0] < w[1]), "{v:?}");
                }
                if *ty == ColumnType::Price {
                    let v: Vec<f64> = s
                        .table
                        .rows
                        .iter()
                        .map(|r| r[j][r[j].char_indices().nth(1).unwrap().0..].parse().unwrap())
                        .collect();
                    let step = v[1] - v[0];
                    assert!(
                        step > 0.0 && v.windows(2).all(|w| (w[1] - w[0] - step).abs() < 0.011),
                        "{v:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn labels_cover_headers() {
        let labels = header_labels();
        assert!(labels.contains(&"nation".to_string()));
        assert!(!labels.contains(&"athlete".to_string()));
        assert_eq!("price".parse::<ColumnType>().unwrap(), ColumnType::Price);
    }
}
