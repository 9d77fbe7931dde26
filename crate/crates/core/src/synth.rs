//! Seeded synthetic knowledge graphs with planted compositional structure.
//!
//! People are born in cities that belong to countries, study at schools that
//! sit in cities, speak languages, join teams and act in films. Most facts
//! are correlated through short chains (citizenship follows the birth city's
//! country, birth city follows the school's city, and so on) with a tunable
//! amount of noise, so two-, three- and four-hop rules of varying confidence
//! exist at every scale.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kg::{KgBuilder, KnowledgeGraph};

#[derive(Clone, Debug)]
pub struct SynthConfig {
    /// Exact number of distinct triples to emit.
    pub triples: usize,
    pub seed: u64,
    /// Probability that a correlated fact ignores its chain.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { triples: 5000, seed: 7, noise: 0.15 }
    }
}

struct World {
    cities: usize,
    countries: usize,
    schools: usize,
    teams: usize,
    languages: usize,
    films: usize,
    companies: usize,
    city_country: Vec<usize>,
    school_city: Vec<usize>,
    team_country: Vec<usize>,
    country_language: Vec<usize>,
    company_city: Vec<usize>,
}

fn name(kind: &str, i: usize) -> String {
    format!("{kind}_{i}")
}

/// Generates `(head, relation, tail)` name triples in emission order.
pub fn generate_triples(config: &SynthConfig) -> Vec<(String, String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let people = (config.triples / 9).max(4);
    let cities = (people / 8).max(4);
    let countries = (cities / 5).max(3);
    let mut w = World {
        cities,
        countries,
        schools: cities * 2,
        teams: (people / 15).max(2),
        languages: countries + 2,
        films: (people / 6).max(2),
        companies: (people / 10).max(2),
        city_country: Vec::new(),
        school_city: Vec::new(),
        team_country: Vec::new(),
        country_language: Vec::new(),
        company_city: Vec::new(),
    };
    w.city_country = (0..w.cities).map(|c| c % w.countries).collect();
    w.school_city = (0..w.schools).map(|_| rng.gen_range(0..w.cities)).collect();
    w.team_country = (0..w.teams).map(|_| rng.gen_range(0..w.countries)).collect();
    w.country_language = (0..w.countries).map(|n| n % w.languages).collect();
    w.company_city = (0..w.companies).map(|_| rng.gen_range(0..w.cities)).collect();

    let mut seen: BTreeSet<(String, String, String)> = BTreeSet::new();
    let mut out = Vec::with_capacity(config.triples);
    let mut emit = |h: String, r: &str, t: String, out: &mut Vec<(String, String, String)>| {
        if out.len() < config.triples {
            let key = (h, r.to_owned(), t);
            if seen.insert(key.clone()) {
                out.push(key);
            }
        }
    };

    for c in 0..w.cities {
        emit(name("city", c), "city_of", name("country", w.city_country[c]), &mut out);
    }
    for s in 0..w.schools {
        emit(name("school", s), "located_in", name("city", w.school_city[s]), &mut out);
    }
    for t in 0..w.teams {
        emit(name("team", t), "team_country", name("country", w.team_country[t]), &mut out);
    }
    for n in 0..w.countries {
        emit(name("country", n), "official_language", name("language", w.country_language[n]), &mut out);
    }
    for o in 0..w.companies {
        emit(name("company", o), "headquarters", name("city", w.company_city[o]), &mut out);
    }

    let mut p = 0usize;
    while out.len() < config.triples {
        let me = name("person", p);
        let noisy = |rng: &mut ChaCha8Rng| rng.gen_bool(config.noise);
        let school = rng.gen_range(0..w.schools);
        emit(me.clone(), "high_school", name("school", school), &mut out);
        let born = if noisy(&mut rng) { rng.gen_range(0..w.cities) } else { w.school_city[school] };
        emit(me.clone(), "born_in", name("city", born), &mut out);
        let country = if noisy(&mut rng) { rng.gen_range(0..w.countries) } else { w.city_country[born] };
        emit(me.clone(), "citizen_of", name("country", country), &mut out);
        let lang = if noisy(&mut rng) { rng.gen_range(0..w.languages) } else { w.country_language[country] };
        emit(me.clone(), "speaks", name("language", lang), &mut out);
        if rng.gen_bool(0.6) {
            let company = rng.gen_range(0..w.companies);
            emit(me.clone(), "works_for", name("company", company), &mut out);
            let home = if noisy(&mut rng) { rng.gen_range(0..w.cities) } else { w.company_city[company] };
            emit(me.clone(), "lives_in", name("city", home), &mut out);
        }
        if rng.gen_bool(0.35) {
            let same: Vec<usize> = (0..w.teams).filter(|&t| w.team_country[t] == country).collect();
            let team = match same.choose(&mut rng) {
                Some(&t) if !noisy(&mut rng) => t,
                _ => rng.gen_range(0..w.teams),
            };
            emit(me.clone(), "member_of_team", name("team", team), &mut out);
        }
        if p > 0 && rng.gen_bool(0.2) {
            let other = rng.gen_range(0..p);
            emit(me.clone(), "spouse", name("person", other), &mut out);
        }
        if p % 3 == 2 {
            let film = rng.gen_range(0..w.films);
            emit(name("film", film), "cast_member", me.clone(), &mut out);
            let film_lang = if noisy(&mut rng) { rng.gen_range(0..w.languages) } else { lang };
            emit(name("film", film), "original_language", name("language", film_lang), &mut out);
            emit(name("film", film), "film_country", name("country", country), &mut out);
        }
        p += 1;
    }
    out
}

pub fn generate(config: &SynthConfig) -> KnowledgeGraph {
    let mut b = KgBuilder::new();
    for (h, r, t) in generate_triples(config) {
        b.add_triple(&h, &r, &t);
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_triple_count_and_determinism() {
        let cfg = SynthConfig { triples: 5000, seed: 1, ..Default::default() };
        let a = generate(&cfg);
        assert_eq!(a.triple_count(), 5000);
        let b = generate(&cfg);
        assert_eq!(a.triples().collect::<Vec<_>>(), b.triples().collect::<Vec<_>>());
    }
}
