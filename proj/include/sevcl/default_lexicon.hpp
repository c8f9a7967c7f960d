/**
 * Copyright 2026 The Sevcl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <array>
#include <string_view>

namespace sevcl {

// Reconstructed keyword lexicon. Phrases are written in ordinary spelling; the
// loader folds them, so diacritics and hamza forms here are harmless.
struct DefaultLexiconSource {
  std::array<std::string_view, 32> critical;
  std::array<std::string_view, 32> moderate;
  std::array<std::string_view, 32> mild;
};

inline constexpr DefaultLexiconSource kDefaultLexicon{
    // critical: emergency symptoms
    {"ألم شديد في الصدر", "ألم حاد في الصدر", "نزيف شديد", "نزيف حاد",
     "فقدان الوعي", "فقدت الوعي", "إغماء", "ضيق تنفس شديد",
     "صعوبة في التنفس", "صعوبة التنفس", "لا أستطيع التنفس", "ورم",
     "أورام", "سرطان", "جلطة", "سكتة دماغية",
     "شلل", "تشنجات", "نوبة قلبية", "أزمة قلبية",
     "نزيف في المخ", "تقيؤ دم", "قيء دم", "دم في البراز",
     "تسمم", "غيبوبة", "كسر في الجمجمة", "الزائدة الدودية",
     "حروق شديدة", "انسداد الشرايين", "ازرقاق الشفاه", "شلل نصفي"},
    // moderate: intermediate conditions
    {"حمى", "حرارة مرتفعة", "ارتفاع الحرارة", "سخونة",
     "استفراغ", "قيء", "ترجيع", "غثيان",
     "ألم مستمر", "ألم دائم", "ألم في الصدر", "بألم في الصدر",
     "ألم بالصدر", "ألم في البطن", "مغص", "إسهال",
     "ألم في الظهر", "ألم المفاصل", "التهاب", "التهاب الحلق",
     "التهاب المسالك", "دوخة", "دوار", "ضيق تنفس",
     "كحة مستمرة", "سعال مستمر", "طفح جلدي", "حساسية",
     "ضغط مرتفع", "سكر مرتفع", "ألم في الأذن", "خفقان"},
    // mild: minor discomfort
    {"صداع", "صداع خفيف", "زكام", "رشح",
     "نزلة برد", "برد", "سعال", "كحة",
     "عطس", "احتقان", "ألم بسيط", "ألم خفيف",
     "انزعاج بسيط", "إرهاق", "تعب", "حكة",
     "قشرة", "حب الشباب", "تساقط الشعر", "جفاف الجلد",
     "تسوس", "تسوس الأسنان", "ألم الأسنان", "حموضة",
     "انتفاخ", "إمساك", "أرق", "زغللة",
     "دمل", "ثآليل", "هالات سوداء", "قرحة الفم"},
};

}  // namespace sevcl
