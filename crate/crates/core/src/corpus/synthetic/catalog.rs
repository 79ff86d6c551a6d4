//! Hand-written task inventory for the synthetic corpus.
//!
//! Answer templates name their slot ("my pin is [NUMBER]") so that a user
//! who answers two questions at once can still be matched to the right node.

pub(super) struct Slot {
    pub key: &'static str,
    pub question: &'static str,
    pub answer: &'static str,
}

pub(super) struct TaskDef {
    pub id: &'static str,
    pub request: &'static str,
    pub slots: [Slot; 5],
    /// Asked instead when the user cannot answer the first slot.
    pub backup: Slot,
    pub faq_question: &'static str,
    pub faq_answer: &'static str,
    pub db_result: &'static str,
    pub inform: &'static str,
}

pub(super) struct DomainDef {
    pub id: &'static str,
    pub tasks: [TaskDef; 3],
}

const fn slot(key: &'static str, question: &'static str, answer: &'static str) -> Slot {
    Slot {
        key,
        question,
        answer,
    }
}

pub(super) const DOMAINS: [DomainDef; 3] = [
    DomainDef {
        id: "bank",
        tasks: [
            TaskDef {
                id: "bank_balance",
                request: "I would like to check my bank balance.",
                slots: [
                    slot(
                        "account_number",
                        "Could you tell me your account number, please?",
                        "My account number is [NUMBER]",
                    ),
                    slot(
                        "full_name",
                        "Could I get your full name, please?",
                        "My full name is [NAME]",
                    ),
                    slot(
                        "pin",
                        "Could you please provide your PIN?",
                        "My pin is [NUMBER]",
                    ),
                    slot(
                        "home_branch",
                        "Which branch holds your account?",
                        "My home branch is in [CITY]",
                    ),
                    slot(
                        "phone_number",
                        "What phone number do we have on file for you?",
                        "My phone number is [NUMBER]",
                    ),
                ],
                backup: slot(
                    "date_of_birth",
                    "Could you provide your date of birth, please?",
                    "My date of birth is [DATE]",
                ),
                faq_question: "Are there any fees for checking my balance?",
                faq_answer: "Balance checks are free of charge.",
                db_result: "RESULT: balance [AMOUNT]",
                inform: "Your balance is {balance}.",
            },
            TaskDef {
                id: "bank_transfer",
                request: "I want to send money to someone.",
                slots: [
                    slot(
                        "source_account",
                        "Which account should the money come from?",
                        "The source account is [NUMBER]",
                    ),
                    slot(
                        "recipient_name",
                        "Who is the recipient of the transfer?",
                        "The recipient name is [NAME]",
                    ),
                    slot(
                        "transfer_amount",
                        "How much would you like to transfer?",
                        "The transfer amount is [AMOUNT]",
                    ),
                    slot(
                        "transfer_date",
                        "When should the transfer happen?",
                        "The transfer date is [DATE]",
                    ),
                    slot(
                        "payment_reference",
                        "What reference should appear on the payment?",
                        "The payment reference is [WORD]",
                    ),
                ],
                backup: slot(
                    "security_word",
                    "What is your security word?",
                    "My security word is [WORD]",
                ),
                faq_question: "How long does a transfer take?",
                faq_answer: "Transfers usually arrive within one business day.",
                db_result: "RESULT: transfer scheduled",
                inform: "Your transfer of {amount} to {recipient} is scheduled.",
            },
            TaskDef {
                id: "bank_card_block",
                request: "I need to block my credit card.",
                slots: [
                    slot(
                        "card_number",
                        "What is the number on the card?",
                        "The card number is [NUMBER]",
                    ),
                    slot(
                        "card_holder",
                        "What is the name of the card holder?",
                        "The card holder is [NAME]",
                    ),
                    slot(
                        "last_purchase",
                        "Where did you last use the card?",
                        "My last purchase was in [CITY]",
                    ),
                    slot(
                        "loss_date",
                        "When did you notice the card was missing?",
                        "The loss date was [DATE]",
                    ),
                    slot(
                        "postal_code",
                        "What postal code is the card registered to?",
                        "My postal code is [NUMBER]",
                    ),
                ],
                backup: slot(
                    "mothers_name",
                    "What is your mother's first name?",
                    "My mother's first name is [NAME]",
                ),
                faq_question: "Will I get a new card?",
                faq_answer: "A replacement card is mailed within five days.",
                db_result: "RESULT: card blocked",
                inform: "Your card ending in {digits} has been blocked.",
            },
        ],
    },
    DomainDef {
        id: "ride",
        tasks: [
            TaskDef {
                id: "ride_book",
                request: "I would like to book a taxi.",
                slots: [
                    slot(
                        "pickup_location",
                        "Where should the driver pick you up?",
                        "The pickup location is [CITY]",
                    ),
                    slot(
                        "destination",
                        "Where are you heading?",
                        "My destination is [CITY]",
                    ),
                    slot(
                        "pickup_time",
                        "What time do you want to leave?",
                        "The pickup time is [TIME]",
                    ),
                    slot(
                        "passenger_count",
                        "How many people are riding?",
                        "The passenger count is [COUNT]",
                    ),
                    slot(
                        "rider_name",
                        "What name should the driver ask for?",
                        "The rider name is [NAME]",
                    ),
                ],
                backup: slot(
                    "street_corner",
                    "Which street corner is closest to you?",
                    "The nearest corner is [WORD] street",
                ),
                faq_question: "Can I bring a pet in the car?",
                faq_answer: "Small pets are welcome in every car.",
                db_result: "RESULT: driver assigned",
                inform: "A driver will pick you up at {time}.",
            },
            TaskDef {
                id: "ride_status",
                request: "Where is my ride right now?",
                slots: [
                    slot(
                        "booking_code",
                        "What is your booking code?",
                        "My booking code is [NUMBER]",
                    ),
                    slot(
                        "booking_name",
                        "Which name is the ride booked under?",
                        "The booking name is [NAME]",
                    ),
                    slot(
                        "waiting_spot",
                        "Where are you waiting?",
                        "My waiting spot is in [CITY]",
                    ),
                    slot(
                        "booked_time",
                        "What time was the ride booked for?",
                        "The booked time is [TIME]",
                    ),
                    slot(
                        "driver_name",
                        "Do you know the name of your driver?",
                        "The driver name is [NAME]",
                    ),
                ],
                backup: slot(
                    "email_address",
                    "What email address did you book with?",
                    "My email address is [WORD] at mail dot com",
                ),
                faq_question: "Can I change the destination?",
                faq_answer: "You can change the destination until pickup.",
                db_result: "RESULT: driver nearby",
                inform: "Your driver is {minutes} minutes away.",
            },
            TaskDef {
                id: "ride_cancel",
                request: "I need to cancel my ride.",
                slots: [
                    slot(
                        "ride_code",
                        "Could you share the ride code?",
                        "The ride code is [NUMBER]",
                    ),
                    slot(
                        "passenger_name",
                        "Whose name is on the booking?",
                        "The passenger name is [NAME]",
                    ),
                    slot(
                        "cancel_reason",
                        "Why are you cancelling today?",
                        "My cancel reason is [WORD]",
                    ),
                    slot(
                        "planned_time",
                        "When was the pickup planned?",
                        "The planned time was [TIME]",
                    ),
                    slot(
                        "refund_method",
                        "How would you like to get your refund?",
                        "My refund method is [WORD]",
                    ),
                ],
                backup: slot(
                    "booking_phone",
                    "Which phone number made the booking?",
                    "The booking phone is [NUMBER]",
                ),
                faq_question: "Is there a cancellation fee?",
                faq_answer: "Cancelling more than an hour ahead is free.",
                db_result: "RESULT: ride cancelled",
                inform: "Your ride {code} has been cancelled.",
            },
        ],
    },
    DomainDef {
        id: "spaceship",
        tasks: [
            TaskDef {
                id: "spaceship_access_codes",
                request: "I need the access code for the ship.",
                slots: [
                    slot(
                        "crew_name",
                        "Please provide your name.",
                        "My crew name is [NAME]",
                    ),
                    slot("code", "Please enter the code.", "The code is [NUMBER]"),
                    slot(
                        "code_type",
                        "Please specify the code type.",
                        "The code type is [WORD]",
                    ),
                    slot("rank", "What is your rank on board?", "My rank is [WORD]"),
                    slot("deck", "Which deck are you on?", "My deck is [COUNT]"),
                ],
                backup: slot(
                    "badge_number",
                    "What is your badge number?",
                    "My badge number is [NUMBER]",
                ),
                faq_question: "Who else can open the door?",
                faq_answer: "Only senior crew can open the door.",
                db_result: "RESULT: code accepted",
                inform: "Access granted, the door is open.",
            },
            TaskDef {
                id: "spaceship_life_support",
                request: "Life support is failing on my deck.",
                slots: [
                    slot(
                        "affected_deck",
                        "Which deck is affected?",
                        "The affected deck is [COUNT]",
                    ),
                    slot(
                        "oxygen_level",
                        "What is the current oxygen level?",
                        "The oxygen level is [COUNT] percent",
                    ),
                    slot(
                        "reporter_name",
                        "Who is reporting the problem?",
                        "The reporter name is [NAME]",
                    ),
                    slot(
                        "alarm_color",
                        "What color is the alarm light?",
                        "The alarm color is [COLOR]",
                    ),
                    slot(
                        "crew_count",
                        "How many crew members are on the deck?",
                        "The crew count is [COUNT]",
                    ),
                ],
                backup: slot(
                    "sensor_reading",
                    "What does the backup sensor show?",
                    "The sensor reading is [COUNT]",
                ),
                faq_question: "Is it safe to stay on the deck?",
                faq_answer: "Stay put and keep your mask on.",
                db_result: "RESULT: repair crew dispatched",
                inform: "A repair crew is on the way to deck {deck}.",
            },
            TaskDef {
                id: "spaceship_cargo",
                request: "I want to check the cargo manifest.",
                slots: [
                    slot(
                        "container_id",
                        "What is the container id?",
                        "The container id is [NUMBER]",
                    ),
                    slot(
                        "cargo_owner",
                        "Who owns the cargo?",
                        "The cargo owner is [NAME]",
                    ),
                    slot(
                        "origin_port",
                        "Where was the cargo loaded?",
                        "The origin port is [CITY]",
                    ),
                    slot(
                        "seal_color",
                        "What color is the seal?",
                        "The seal color is [COLOR]",
                    ),
                    slot(
                        "crate_count",
                        "How many crates are listed?",
                        "The crate count is [COUNT]",
                    ),
                ],
                backup: slot(
                    "shipping_date",
                    "When was the cargo shipped?",
                    "The shipping date is [DATE]",
                ),
                faq_question: "Can I open the container myself?",
                faq_answer: "Containers may only be opened in the cargo bay.",
                db_result: "RESULT: manifest found",
                inform: "The manifest lists {items} for your container.",
            },
        ],
    },
];

pub(super) const NAMES: &[&str] = &[
    "Alice", "Bob", "Carol", "Dave", "Erin", "Frank", "Grace", "Heidi", "Ivan", "Judy", "Oscar",
    "Peggy", "Rupert", "Sybil", "Trent", "Victor", "Wendy",
];
pub(super) const CITIES: &[&str] = &[
    "Boston", "Denver", "Austin", "Chicago", "Seattle", "Miami", "Dallas", "Portland", "Atlanta",
    "Phoenix",
];
pub(super) const MONTHS: &[&str] = &[
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
pub(super) const COLORS: &[&str] = &["red", "green", "blue", "amber", "white", "violet"];
pub(super) const WORDS: &[&str] = &[
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
];
