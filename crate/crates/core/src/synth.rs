//! Synthetic scenarios: a query, the tools that serve it, and the correct
//! answer.
//!
//! Scenarios feed the scripted backend (which plays a model that knows the
//! answers) and provide desk-scale corpora for evolution runs and evaluation
//! cases. Everything is a pure function of its seed.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::eval_harness::{Category, EvalCase, ExpectedCall, Subset};
use crate::seeding::{derive_seed, rng, stable_hash};
use crate::tool_schema::{CandidateToolSet, JsonType, ParamBlock, ParamSpec, ToolDoc};
use crate::validation::{InvocationAnswer, ToolCall};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub query: String,
    pub tools: CandidateToolSet,
    pub answer: InvocationAnswer,
}

impl Scenario {
    /// The answer a case expects, taking the first allowed value of each argument.
    pub fn from_case(case: &EvalCase) -> Self {
        let calls = case
            .expected
            .iter()
            .map(|e| {
                let mut args = Map::new();
                for (k, vals) in &e.allowed {
                    if let Some(v) = vals.first() {
                        args.insert(k.clone(), v.clone());
                    }
                }
                ToolCall::new(e.tool_name.clone(), args)
            })
            .collect();
        Self {
            query: case.query.clone(),
            tools: case.tools.clone(),
            answer: InvocationAnswer::new(calls),
        }
    }
}

#[derive(Clone, Copy)]
enum Gen {
    Pick(&'static [&'static str]),
    Int(i64, i64),
    Float(f64, f64),
    Bool,
    Words(&'static [&'static str]),
    Filters,
}

struct ParamTemplate {
    name: &'static str,
    ty: JsonType,
    description: &'static str,
    gen: Gen,
    required: bool,
    enumerated: bool,
}

struct ToolTemplate {
    name: &'static str,
    description: &'static str,
    /// `{param}` placeholders refer to required parameters.
    sentence: &'static str,
    params: &'static [ParamTemplate],
    results: &'static [(&'static str, JsonType, &'static str)],
}

const fn p(name: &'static str, ty: JsonType, description: &'static str, gen: Gen, required: bool) -> ParamTemplate {
    ParamTemplate {
        name,
        ty,
        description,
        gen,
        required,
        enumerated: false,
    }
}

const fn e(name: &'static str, description: &'static str, values: &'static [&'static str], required: bool) -> ParamTemplate {
    ParamTemplate {
        name,
        ty: JsonType::String,
        description,
        gen: Gen::Pick(values),
        required,
        enumerated: true,
    }
}

const CITIES: &[&str] = &["Paris", "Tokyo", "Nairobi", "Lima", "Oslo", "Hanoi", "Denver", "Perth", "Cairo", "Quito"];
const SYMBOLS: &[&str] = &["AAPL", "MSFT", "EUR/USD", "ETH/BTC", "TSLA", "NVDA", "SPY", "GBP/JPY"];
const INTERVALS: &[&str] = &["1min", "5min", "15min", "30min", "45min", "1h", "2h", "4h", "1day", "1week"];
const SERIES: &[&str] = &["open", "high", "low", "close"];
const CURRENCIES: &[&str] = &["USD", "EUR", "JPY", "GBP", "CNY", "INR"];
const LANGUAGES: &[&str] = &["French", "German", "Japanese", "Spanish", "Swahili"];
const PHRASES: &[&str] = &["good morning", "where is the station", "thank you very much", "see you tomorrow", "the meeting is cancelled"];
const PEOPLE: &[&str] = &["ana@example.com", "li@example.com", "omar@example.com", "kim@example.com", "sara@example.com"];
const SUBJECTS: &[&str] = &["Quarterly report", "Lunch plans", "Server outage", "Travel itinerary", "Invoice 2291"];
const TITLES: &[&str] = &["Design review", "Standup", "Dentist", "Team offsite", "1:1 with manager"];
const TIMES: &[&str] = &["2024-05-03T09:00", "2024-06-11T14:30", "2024-07-01T08:15", "2024-09-20T16:00"];
const DATES: &[&str] = &["2024-05-03", "2024-06-11", "2024-07-01", "2024-09-20", "2024-12-24"];
const DISHES: &[&str] = &["ramen", "paella", "shakshuka", "pad thai", "lasagna", "falafel"];
const ROOMS: &[&str] = &["kitchen", "bedroom", "office", "living room"];
const STOPS: &[&str] = &["Museum", "Harbor", "Old Town", "Airport", "Stadium", "University"];
const PACKAGES: &[&str] = &["1Z999AA10123456784", "9400111899223100", "JD014600006281", "LX123456789CN"];
const TOPICS: &[&str] = &["renewable energy", "chess openings", "sourdough baking", "deep sea fish", "jazz history"];

const CATALOG: &[ToolTemplate] = &[
    ToolTemplate {
        name: "Division API",
        description: "Divide two time series and return the result.",
        sentence: "Give me the ratio of the {series_type_1} to the {series_type_2} prices for {symbol} at {interval} intervals.",
        params: &[
            e("interval", "Interval between two consecutive points in time series.", INTERVALS, true),
            p("symbol", JsonType::String, "Instrument symbol, can be any equity, index, ETF, forex or cryptocurrency.", Gen::Pick(SYMBOLS), true),
            e("series_type_1", "Numerator price series.", SERIES, true),
            e("series_type_2", "Denominator price series.", SERIES, true),
            e("format", "Output format.", &["json", "csv"], false),
        ],
        results: &[("values", JsonType::List, "Ratio values ordered by time.")],
    },
    ToolTemplate {
        name: "get_weather_forecast",
        description: "Fetch the weather forecast for a city.",
        sentence: "What will the weather be like in {city}?",
        params: &[
            p("city", JsonType::String, "City name.", Gen::Pick(CITIES), true),
            e("unit", "Temperature unit.", &["celsius", "fahrenheit"], false),
            p("days", JsonType::Int, "Number of forecast days.", Gen::Int(1, 14), false),
        ],
        results: &[],
    },
    ToolTemplate {
        name: "convert_currency",
        description: "Convert an amount of money between two currencies.",
        sentence: "How much is {amount} {from_currency} in {to_currency}?",
        params: &[
            p("amount", JsonType::Float, "Amount to convert.", Gen::Float(1.0, 5000.0), true),
            e("from_currency", "ISO code of the source currency.", CURRENCIES, true),
            e("to_currency", "ISO code of the target currency.", CURRENCIES, true),
        ],
        results: &[("converted", JsonType::Float, "Converted amount."), ("rate", JsonType::Float, "Exchange rate used.")],
    },
    ToolTemplate {
        name: "search_flights",
        description: "Search for flights between two cities on a date.",
        sentence: "Find me flights from {origin} to {destination} on {date}.",
        params: &[
            p("origin", JsonType::String, "Departure city.", Gen::Pick(CITIES), true),
            p("destination", JsonType::String, "Arrival city.", Gen::Pick(CITIES), true),
            p("date", JsonType::String, "Departure date, YYYY-MM-DD.", Gen::Pick(DATES), true),
            p("passengers", JsonType::Int, "Number of passengers.", Gen::Int(1, 6), false),
            p("nonstop", JsonType::Boolean, "Only list nonstop flights.", Gen::Bool, false),
        ],
        results: &[],
    },
    ToolTemplate {
        name: "calculate_bmi",
        description: "Compute body mass index from weight and height.",
        sentence: "What's the BMI for someone weighing {weight_kg} kg at {height_m} m?",
        params: &[
            p("weight_kg", JsonType::Float, "Body weight in kilograms.", Gen::Float(40.0, 130.0), true),
            p("height_m", JsonType::Float, "Height in meters.", Gen::Float(1.4, 2.1), true),
        ],
        results: &[("bmi", JsonType::Float, "Body mass index.")],
    },
    ToolTemplate {
        name: "translate_text",
        description: "Translate a piece of text into another language.",
        sentence: "Translate \"{text}\" into {target_language}.",
        params: &[
            p("text", JsonType::String, "Text to translate.", Gen::Pick(PHRASES), true),
            e("target_language", "Language to translate into.", LANGUAGES, true),
            p("formal", JsonType::Boolean, "Use a formal register.", Gen::Bool, false),
        ],
        results: &[],
    },
    ToolTemplate {
        name: "send_email",
        description: "Send an email message.",
        sentence: "Email {to} with the subject \"{subject}\".",
        params: &[
            p("to", JsonType::String, "Recipient address.", Gen::Pick(PEOPLE), true),
            p("subject", JsonType::String, "Subject line.", Gen::Pick(SUBJECTS), true),
            p("cc", JsonType::List, "Addresses to copy.", Gen::Words(PEOPLE), false),
        ],
        results: &[],
    },
    ToolTemplate {
        name: "create_calendar_event",
        description: "Create an event in the user's calendar.",
        sentence: "Put \"{title}\" on my calendar at {start_time} for {duration_minutes} minutes.",
        params: &[
            p("title", JsonType::String, "Event title.", Gen::Pick(TITLES), true),
            p("start_time", JsonType::String, "Start time, ISO 8601.", Gen::Pick(TIMES), true),
            p("duration_minutes", JsonType::Int, "Length of the event in minutes.", Gen::Int(15, 180), true),
            p("attendees", JsonType::List, "Attendee addresses.", Gen::Words(PEOPLE), false),
        ],
        results: &[("event_id", JsonType::String, "Identifier of the created event.")],
    },
    ToolTemplate {
        name: "get_stock_quote",
        description: "Get the latest quote for a stock symbol.",
        sentence: "What's the latest price of {symbol}?",
        params: &[
            p("symbol", JsonType::String, "Ticker symbol.", Gen::Pick(SYMBOLS), true),
            e("exchange", "Listing exchange.", &["NASDAQ", "NYSE", "LSE", "TSE"], false),
        ],
        results: &[("price", JsonType::Float, "Last traded price.")],
    },
    ToolTemplate {
        name: "plan_route",
        description: "Plan a route through a list of stops.",
        sentence: "Plan a {mode} route through {stops}.",
        params: &[
            p("stops", JsonType::List, "Ordered stops to visit.", Gen::Words(STOPS), true),
            e("mode", "Travel mode.", &["driving", "walking", "cycling", "transit"], true),
        ],
        results: &[],
    },
    ToolTemplate {
        name: "set_thermostat",
        description: "Set the target temperature of a room thermostat.",
        sentence: "Set the {room} thermostat to {temperature} degrees.",
        params: &[
            p("room", JsonType::String, "Room name.", Gen::Pick(ROOMS), true),
            p("temperature", JsonType::Float, "Target temperature in celsius.", Gen::Float(15.0, 28.0), true),
            p("eco_mode", JsonType::Boolean, "Enable energy saving.", Gen::Bool, false),
        ],
        results: &[],
    },
    ToolTemplate {
        name: "find_recipes",
        description: "Search recipes for a dish.",
        sentence: "Find {servings}-serving recipes for {dish}.",
        params: &[
            p("dish", JsonType::String, "Dish to cook.", Gen::Pick(DISHES), true),
            p("servings", JsonType::Int, "Number of servings.", Gen::Int(1, 8), true),
            p("filters", JsonType::Dict, "Dietary filters such as vegan or gluten_free.", Gen::Filters, false),
        ],
        results: &[],
    },
    ToolTemplate {
        name: "track_package",
        description: "Look up the delivery status of a parcel.",
        sentence: "Where is my package {tracking_number}?",
        params: &[
            p("tracking_number", JsonType::String, "Carrier tracking number.", Gen::Pick(PACKAGES), true),
            e("carrier", "Shipping carrier.", &["UPS", "USPS", "DHL", "FedEx"], false),
        ],
        results: &[("status", JsonType::String, "Delivery status.")],
    },
    ToolTemplate {
        name: "search_articles",
        description: "Search news and encyclopedia articles on a topic.",
        sentence: "Find me {limit} articles about {topic}.",
        params: &[
            p("topic", JsonType::String, "Search topic.", Gen::Pick(TOPICS), true),
            p("limit", JsonType::Int, "Maximum number of results.", Gen::Int(1, 20), true),
            p("since", JsonType::String, "Only articles after this date.", Gen::Pick(DATES), false),
        ],
        results: &[],
    },
];

fn build_doc(t: &ToolTemplate) -> ToolDoc {
    let params = t
        .params
        .iter()
        .map(|pt| {
            let spec = ParamSpec::new(pt.name, pt.ty, pt.description);
            match pt.gen {
                Gen::Pick(values) if pt.enumerated => spec.with_enum(values.iter().map(|v| json!(v)).collect()),
                _ => spec,
            }
        })
        .collect();
    let required = t.params.iter().filter(|p| p.required).map(|p| p.name.to_owned()).collect();
    let mut doc = ToolDoc::new(t.name, t.description, ParamBlock::new(params, required));
    if !t.results.is_empty() {
        let results = t
            .results
            .iter()
            .map(|(n, ty, d)| ParamSpec::new(*n, *ty, *d))
            .collect();
        let mut block = ParamBlock::new(results, Vec::new());
        block.required = None;
        doc.results = Some(block);
    }
    doc
}

/// Every tool the generator can draw from, in catalog order.
pub fn catalog() -> Vec<ToolDoc> {
    CATALOG.iter().map(build_doc).collect()
}

fn gen_value<R: Rng>(gen: Gen, rng: &mut R) -> Value {
    match gen {
        Gen::Pick(values) => json!(values.choose(rng).unwrap()),
        Gen::Int(lo, hi) => json!(rng.gen_range(lo..=hi)),
        Gen::Float(lo, hi) => {
            // Two decimals, never integral, so the value reads as a float.
            let cents = rng.gen_range((lo * 100.0) as i64..(hi * 100.0) as i64);
            let cents = if cents % 100 == 0 { cents + 25 } else { cents };
            json!(cents as f64 / 100.0)
        }
        Gen::Bool => json!(rng.gen_bool(0.5)),
        Gen::Words(values) => {
            let k = rng.gen_range(1..=3.min(values.len()));
            let picked: Vec<&str> = values.choose_multiple(rng, k).copied().collect();
            json!(picked)
        }
        Gen::Filters => {
            let mut m = Map::new();
            for key in ["vegan", "gluten_free", "nut_free"] {
                if rng.gen_bool(0.5) {
                    m.insert(key.into(), json!(true));
                }
            }
            if m.is_empty() {
                m.insert("vegan".into(), json!(false));
            }
            Value::Object(m)
        }
    }
}

fn gen_call<R: Rng>(t: &ToolTemplate, rng: &mut R) -> ToolCall {
    let mut args = Map::new();
    for pt in t.params {
        if pt.required || rng.gen_bool(0.4) {
            args.insert(pt.name.into(), gen_value(pt.gen, rng));
        }
    }
    ToolCall::new(t.name, args)
}

fn display(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(display).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

fn sentence(t: &ToolTemplate, call: &ToolCall) -> String {
    let mut s = t.sentence.to_owned();
    let mut optional = Vec::new();
    for pt in t.params {
        let Some(v) = call.arguments.get(pt.name) else { continue };
        let slot = format!("{{{}}}", pt.name);
        if s.contains(&slot) {
            s = s.replace(&slot, &display(v));
        } else {
            optional.push(format!("{} {}", pt.name.replace('_', " "), display(v)));
        }
    }
    if !optional.is_empty() {
        s.push_str(&format!(" Use {}.", optional.join(" and ")));
    }
    s
}

fn pick_templates<R: Rng>(category: Category, rng: &mut R) -> (Vec<&'static ToolTemplate>, usize) {
    let n_tools = match category {
        Category::Simple | Category::Parallel => 1,
        Category::Multiple | Category::ParallelMultiple => rng.gen_range(2..=4),
    };
    let n_calls = if category.is_parallel() { rng.gen_range(2..=3) } else { 1 };
    let tools: Vec<&ToolTemplate> = CATALOG.choose_multiple(rng, n_tools).collect();
    (tools, n_calls)
}

fn build<R: Rng>(category: Category, rng: &mut R, query: Option<String>, tag: &str) -> Scenario {
    let (templates, n_calls) = pick_templates(category, rng);
    let mut calls: Vec<ToolCall> = Vec::new();
    let mut used: Vec<&ToolTemplate> = Vec::new();
    while calls.len() < n_calls {
        let t = if category == Category::ParallelMultiple && calls.len() < templates.len().min(n_calls) {
            // Spread the first calls over distinct tools.
            templates[calls.len()]
        } else {
            templates.choose(rng).copied().unwrap()
        };
        let call = (0..16)
            .map(|_| gen_call(t, rng))
            .find(|c| !calls.contains(c))
            .unwrap_or_else(|| gen_call(t, rng));
        calls.push(call);
        used.push(t);
    }
    let query = query.unwrap_or_else(|| {
        let body = used
            .iter()
            .zip(&calls)
            .map(|(t, c)| sentence(t, c))
            .collect::<Vec<_>>()
            .join(" Also, ");
        format!("{body} (ref {tag})")
    });
    let tools = CandidateToolSet::new(templates.iter().map(|t| build_doc(t)).collect())
        .expect("catalog names are unique");
    Scenario {
        query,
        tools,
        answer: InvocationAnswer::new(calls),
    }
}

fn category_for(index: u64) -> Category {
    Category::ALL[(index % 4) as usize]
}

/// The `index`-th scenario of a seeded corpus. Categories rotate through
/// simple, multiple, parallel and parallel-multiple.
pub fn scenario(seed: u64, index: u64) -> Scenario {
    let mut r = rng(derive_seed(seed, "scenario", index));
    build(category_for(index), &mut r, None, &format!("{seed:x}-{index}"))
}

pub fn scenarios(seed: u64, n: usize) -> Vec<Scenario> {
    (0..n as u64).map(|i| scenario(seed, i)).collect()
}

/// A scenario for arbitrary query text, derived from a hash of the text.
pub fn scenario_for_query(query: &str) -> Scenario {
    let h = stable_hash(&[b"query", query.as_bytes()]);
    let mut r = rng(h);
    build(category_for(h >> 7), &mut r, Some(query.to_owned()), "")
}

/// An evaluation case whose expected calls accept exactly the scenario answer.
pub fn eval_case(id: impl Into<String>, subset: Subset, category: Category, seed: u64, index: u64) -> EvalCase {
    let mut r = rng(derive_seed(seed, &format!("case-{subset}-{category}"), index));
    let sc = build(category, &mut r, None, &format!("{subset}-{category}-{index}"));
    let expected = sc
        .answer
        .calls
        .iter()
        .map(|c| {
            let tool = sc.tools.get(&c.tool_name).expect("answer uses scenario tools");
            ExpectedCall {
                tool_name: c.tool_name.clone(),
                allowed: c.arguments.iter().map(|(k, v)| (k.clone(), vec![v.clone()])).collect(),
                optional_args: c
                    .arguments
                    .keys()
                    .filter(|k| !tool.required().contains(k))
                    .cloned()
                    .collect(),
            }
        })
        .collect();
    EvalCase {
        id: id.into(),
        subset,
        category,
        query: sc.query,
        tools: sc.tools,
        expected,
    }
}

/// `per_category` cases for each of the eight subset/category cells.
pub fn eval_suite(seed: u64, per_category: usize) -> Vec<EvalCase> {
    let mut out = Vec::new();
    for subset in Subset::ALL {
        for category in Category::ALL {
            for i in 0..per_category {
                out.push(eval_case(format!("{subset}_{category}_{i}"), subset, category, seed, i as u64));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval_harness::score_case;
    use crate::tool_schema::validate_tool_doc;
    use crate::validation::validate_invocation;

    #[test]
    fn catalog_tools_are_clean() {
        let docs = catalog();
        assert!(docs.iter().all(|d| validate_tool_doc(d).is_empty()));
        assert!(CandidateToolSet::new(docs).is_ok());
    }

    #[test]
    fn scenarios_are_rule_clean_and_deterministic() {
        for (i, sc) in scenarios(11, 200).iter().enumerate() {
            assert!(!sc.answer.is_empty());
            assert!(validate_invocation(&sc.answer, &sc.tools).is_empty(), "scenario {i}");
            assert_eq!(sc, &scenario(11, i as u64));
        }
        let qs: std::collections::HashSet<_> = scenarios(11, 200).into_iter().map(|s| s.query).collect();
        assert_eq!(qs.len(), 200);
    }

    #[test]
    fn arbitrary_queries_get_stable_scenarios() {
        let a = scenario_for_query("book me a table");
        assert_eq!(a, scenario_for_query("book me a table"));
        assert_eq!(a.query, "book me a table");
        assert!(validate_invocation(&a.answer, &a.tools).is_empty());
    }

    #[test]
    fn eval_cases_are_well_formed_and_self_consistent() {
        for case in eval_suite(3, 5) {
            case.check().unwrap();
            let sc = Scenario::from_case(&case);
            assert!(score_case(&sc.answer, &case), "{}", case.id);
        }
    }
}
